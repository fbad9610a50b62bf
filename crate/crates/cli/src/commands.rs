use std::path::Path;

use lmpm_core::abstraction::{
    build_dataset, parse_raw, parse_records, to_jsonl, AbstractRecord, BuildOptions, RuleTagger, SuffixMatcher,
};
use lmpm_core::builder::{heuristic_build_for, oracle_build, ModelGenerator};
use lmpm_core::checkpoint;
use lmpm_core::evaluator::{evaluate as eval_tree, scorer_by_name, CSV_HEADER};
use lmpm_core::inspect::{alpha_rows, probes_from_records, probes_from_trees, purity, rows_csv, summary_csv};
use lmpm_core::model::{Example, Lmpm};
use lmpm_core::trainer::{self, select_fraction, LossCurve};
use lmpm_core::treebank::{extract_pairs, parse_treebank, serialize_treebank, Strictness};
use lmpm_core::vocab::{placeholder_index, tokenize, Vocabulary};
use lmpm_core::{Error, Result};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{AbstractArgs, EvaluateArgs, FinetuneArgs, GenerateArgs, InspectArgs, Mode, PretrainArgs, TrainFlags};

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Line { line, msg } => Error::Input(format!("{}:{line}: {msg}", path.display())),
        other => other,
    }
}

/// Config file, then flags.
fn run_config(flags: &TrainFlags) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(flags.config.as_deref())?;
    let t = &mut cfg.train;
    if let Some(v) = flags.epochs {
        t.epochs = v;
    }
    if let Some(v) = flags.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = flags.lr {
        t.lr = v;
    }
    if let Some(v) = flags.seed {
        t.seed = v;
    }
    if let Some(v) = flags.temperature_start {
        t.temperature_start = v;
    }
    if let Some(v) = flags.temperature_end {
        t.temperature_end = v;
    }
    if flags.no_memory {
        t.no_memory = true;
    }
    if let Some(v) = flags.slots {
        cfg.model.slots = v;
    }
    Ok(cfg)
}

/// Token sequences from any corpus or treebank file.
fn texts_of(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line)
            .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if v.get("proof").is_some() {
            let t = parse_treebank(line, Strictness::Structure).map_err(|e| in_file(path, e))?;
            for tree in t {
                out.push(tokenize(&tree.hypothesis));
                out.extend(tree.sentences.iter().map(|(_, s)| tokenize(s)));
                out.extend(tree.steps.iter().map(|s| tokenize(&s.conclusion_text)));
            }
        } else {
            for k in ["p1", "p2", "c"] {
                if let Some(s) = v.get(k).and_then(Value::as_str) {
                    out.push(tokenize(s));
                }
            }
        }
    }
    Ok(out)
}

fn build_vocab(mut seqs: Vec<Vec<String>>, extra: &[std::path::PathBuf], min_count: usize) -> Result<Vocabulary> {
    for p in extra {
        seqs.extend(texts_of(p)?);
    }
    Vocabulary::build(seqs, min_count)
}

fn save_curve(path: Option<&Path>, curve: &LossCurve) -> Result<()> {
    match path {
        Some(p) => write(p, &curve.to_csv()),
        None => Ok(()),
    }
}

fn report_curve(what: &str, n: usize, curve: &LossCurve) {
    let first = curve.rows.first().map_or(f64::NAN, |r| r.total);
    let last = curve.last().unwrap_or(f64::NAN);
    println!("{what}: {n} examples, {} steps, first-step loss {first:.4}, final-epoch loss {last:.4}", curve.rows.len());
}

pub fn abstract_cmd(a: AbstractArgs) -> Result<()> {
    let raw = parse_raw(&read(&a.input)?).map_err(|e| in_file(&a.input, e))?;
    let mut tagger = RuleTagger::new();
    if let Some(p) = &a.lexicon {
        tagger.load_lexicon(&read(p)?).map_err(|e| in_file(p, e))?;
    }
    let opts = BuildOptions {
        fraction: a.fraction,
        seed: a.seed,
        no_abstraction: a.no_abstraction,
    };
    let (records, stats) = build_dataset(&raw, &opts, &tagger, &SuffixMatcher)?;
    write(&a.output, &to_jsonl(&records)?)?;
    let stats = serde_json::to_string_pretty(&stats)? + "\n";
    match &a.stats {
        Some(p) => write(p, &stats),
        None => {
            print!("{stats}");
            Ok(())
        }
    }
}

/// Abstract records as given, or raw triples abstracted here.
fn load_corpus(path: &Path, cfg: &RunConfig) -> Result<Vec<AbstractRecord>> {
    let text = read(path)?;
    let is_records = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .and_then(|l| serde_json::from_str::<Value>(l).ok())
        .is_some_and(|v| v.get("entity_map").is_some());
    let t = &cfg.train;
    if is_records {
        let recs = parse_records(&text).map_err(|e| in_file(path, e))?;
        if t.no_abstraction && recs.iter().any(|r| r.tokens().iter().flatten().any(|w| placeholder_index(w).is_some())) {
            return Err(Error::Config(format!(
                "train.no_abstraction is set but {} holds abstracted records",
                path.display()
            )));
        }
        let keep = select_fraction(recs.len(), t.pretrain_fraction, t.seed)?;
        Ok(keep.into_iter().map(|i| recs[i].clone()).collect())
    } else {
        let raw = parse_raw(&text).map_err(|e| in_file(path, e))?;
        let opts = BuildOptions {
            fraction: t.pretrain_fraction,
            seed: t.seed,
            no_abstraction: t.no_abstraction,
        };
        Ok(build_dataset(&raw, &opts, &RuleTagger::new(), &SuffixMatcher)?.0)
    }
}

pub fn pretrain(a: PretrainArgs) -> Result<()> {
    let mut cfg = run_config(&a.train)?;
    if a.no_lpp {
        cfg.train.no_lpp = true;
    }
    if a.no_abstraction {
        cfg.train.no_abstraction = true;
    }
    if let Some(f) = a.fraction {
        cfg.train.pretrain_fraction = f;
    }
    cfg.train.validate()?;
    if cfg.train.no_lpp {
        println!("phase skipped: pre-training disabled (no_lpp)");
        return Ok(());
    }
    let records = load_corpus(&a.corpus, &cfg)?;
    if records.is_empty() {
        return Err(Error::Config(format!("corpus {} is empty", a.corpus.display())));
    }
    let toks: Vec<[Vec<String>; 3]> = records.iter().map(AbstractRecord::tokens).collect();
    let vocab = build_vocab(toks.iter().flatten().cloned().collect(), &a.train.vocab_extra, cfg.vocab_min_count)?;
    let examples = toks
        .iter()
        .map(|t| Example::new(&t[0], &t[1], &t[2], &vocab))
        .collect::<Result<Vec<_>>>()?;
    cfg.model.vocab_size = vocab.len();
    let mut model = Lmpm::new(cfg.model.clone(), cfg.train.temperature_start, cfg.train.seed)?;
    let curve = trainer::pretrain(&mut model, &examples, &cfg.train)?;
    checkpoint::save(&a.out, &model, &vocab)?;
    save_curve(a.train.loss_csv.as_deref(), &curve)?;
    report_curve("pretrain", examples.len(), &curve);
    Ok(())
}

pub fn finetune(a: FinetuneArgs) -> Result<()> {
    let mut cfg = run_config(&a.train)?;
    if a.freeze_memory {
        cfg.train.freeze_memory = true;
    }
    if a.bow_in_finetune {
        cfg.train.bow_in_finetune = true;
    }
    cfg.train.validate()?;
    let trees = parse_treebank(&read(&a.treebank)?, Strictness::Gold).map_err(|e| in_file(&a.treebank, e))?;
    let pairs: Vec<_> = trees.iter().flat_map(extract_pairs).collect();
    let toks: Vec<[Vec<String>; 3]> = pairs
        .iter()
        .map(|p| [tokenize(&p.p1), tokenize(&p.p2), tokenize(&p.conclusion)])
        .collect();
    let (mut model, vocab) = match &a.checkpoint {
        Some(p) => {
            if !a.train.vocab_extra.is_empty() {
                return Err(Error::Config(
                    "--vocab-extra only applies when no checkpoint is given".into(),
                ));
            }
            let ck = checkpoint::load(p)?;
            (ck.model, ck.vocab)
        }
        None => {
            let vocab = build_vocab(toks.iter().flatten().cloned().collect(), &a.train.vocab_extra, cfg.vocab_min_count)?;
            cfg.model.vocab_size = vocab.len();
            (Lmpm::new(cfg.model.clone(), 1.0, cfg.train.seed)?, vocab)
        }
    };
    let examples = toks
        .iter()
        .map(|t| Example::new(&t[0], &t[1], &t[2], &vocab))
        .collect::<Result<Vec<_>>>()?;
    let curve = trainer::finetune(&mut model, &examples, &cfg.train)?;
    checkpoint::save(&a.out, &model, &vocab)?;
    save_curve(a.train.loss_csv.as_deref(), &curve)?;
    report_curve("finetune", examples.len(), &curve);
    Ok(())
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    let h = &mut cfg.heuristic;
    if let Some(v) = a.w_pair {
        h.w_pair = v;
    }
    if let Some(v) = a.w_hyp {
        h.w_hyp = v;
    }
    if let Some(v) = a.stop_threshold {
        h.stop_threshold = v;
    }
    if a.max_steps.is_some() {
        h.max_steps = a.max_steps;
    }
    h.validate()?;
    let trees = parse_treebank(&read(&a.treebank)?, Strictness::Gold).map_err(|e| in_file(&a.treebank, e))?;
    let ck = checkpoint::load(&a.checkpoint)?;
    let mut gen = ModelGenerator::new(&ck.model, &ck.vocab)?;
    if a.no_memory || cfg.train.no_memory {
        gen = gen.without_memory();
    }
    let mut out = Vec::with_capacity(trees.len());
    for t in &trees {
        out.push(match a.mode {
            Mode::Oracle => oracle_build(t, &gen)?,
            Mode::Heuristic => heuristic_build_for(t, &gen, &cfg.heuristic)?,
        });
    }
    write(&a.out, &serialize_treebank(&out)?)?;
    println!("generated {} trees", out.len());
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.scorer {
        cfg.eval.scorer = s;
    }
    if let Some(t) = a.threshold {
        cfg.eval.threshold = t;
    }
    let scorer = scorer_by_name(&cfg.eval.scorer)?;
    let pred = parse_treebank(&read(&a.pred)?, Strictness::Structure).map_err(|e| in_file(&a.pred, e))?;
    let gold = parse_treebank(&read(&a.gold)?, Strictness::Gold).map_err(|e| in_file(&a.gold, e))?;
    let corpus = lmpm_core::evaluator::evaluate_corpus(&pred, &gold, scorer.as_ref(), cfg.eval.threshold)?;
    let csv = format!("{CSV_HEADER}\n{}\n", corpus.csv_row());
    if let Some(p) = &a.out {
        let per_tree: Vec<Value> = gold
            .iter()
            .filter_map(|g| {
                let p = pred.iter().find(|p| p.id == g.id)?;
                Some(json!({"id": g.id, "report": eval_tree(p, g, scorer.as_ref(), cfg.eval.threshold)}))
            })
            .collect();
        let doc = json!({
            "scorer": cfg.eval.scorer,
            "threshold": cfg.eval.threshold,
            "corpus": corpus,
            "trees": per_tree,
        });
        write(p, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    }
    if let Some(p) = &a.csv {
        write(p, &csv)?;
    }
    print!("{csv}");
    Ok(())
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let text = read(&a.input)?;
    let first: Option<Value> = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .and_then(|l| serde_json::from_str(l).ok());
    let probes = match first {
        Some(v) if v.get("proof").is_some() => {
            probes_from_trees(&parse_treebank(&text, Strictness::Gold).map_err(|e| in_file(&a.input, e))?)?
        }
        _ => probes_from_records(&parse_records(&text).map_err(|e| in_file(&a.input, e))?)?,
    };
    let ck = checkpoint::load(&a.checkpoint)?;
    let rows = alpha_rows(&ck.model, &ck.vocab, &probes)?;
    write(&a.out, &rows_csv(&rows))?;
    let summary = summary_csv(&rows);
    match &a.summary {
        Some(p) => write(p, &summary)?,
        None => print!("{summary}"),
    }
    let report = purity(&rows);
    for (k, t) in &report.types {
        println!(
            "purity {k}: slot {} holds {:.1}% of {} examples",
            t.majority_slot,
            100.0 * t.purity,
            t.count
        );
    }
    println!("distinct majority slots: {}", report.distinct_majorities);
    if let Some(p) = &a.purity {
        write(p, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(())
}
