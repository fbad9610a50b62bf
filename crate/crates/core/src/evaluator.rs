//! Tree metrics: leaves, steps and intermediates F1 with AllCorrect, plus
//! the overall AllCorrect, for single trees and corpora.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::treebank::{cmp_ids, EntailmentTree, HYPOTHESIS};

pub const DEFAULT_THRESHOLD: f64 = 0.7;

/// Sentence similarity used to judge intermediate conclusions.
pub trait Scorer {
    fn score(&self, pred: &str, gold: &str) -> f64;
}

/// Token F1 over normalized bags of words.
#[derive(Clone, Copy, Debug, Default)]
pub struct TokenF1;

/// 1.0 iff the normalized token sequences are identical.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactMatch;

/// Lowercase, drop punctuation, strip a plural `s` (length > 3, not `ss`).
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .map(|w| {
            if w.chars().count() > 3 && w.ends_with('s') && !w.ends_with("ss") {
                w[..w.len() - 1].to_string()
            } else {
                w
            }
        })
        .collect()
}

pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize(pred);
    let g = normalize(gold);
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    f1(common, p.len(), g.len())
}

impl Scorer for TokenF1 {
    fn score(&self, pred: &str, gold: &str) -> f64 {
        token_f1(pred, gold)
    }
}

impl Scorer for ExactMatch {
    fn score(&self, pred: &str, gold: &str) -> f64 {
        if normalize(pred) == normalize(gold) {
            1.0
        } else {
            0.0
        }
    }
}

pub fn scorer_by_name(name: &str) -> Result<Box<dyn Scorer>> {
    match name {
        "token-f1" => Ok(Box::new(TokenF1)),
        "exact" => Ok(Box::new(ExactMatch)),
        other => Err(Error::Config(format!(
            "unknown scorer {other:?}; expected token-f1 or exact"
        ))),
    }
}

fn f1(correct: usize, n_pred: usize, n_gold: usize) -> f64 {
    if correct == 0 {
        return 0.0;
    }
    let p = correct as f64 / n_pred as f64;
    let r = correct as f64 / n_gold as f64;
    2.0 * p * r / (p + r)
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Predicted intermediate id → (gold id, descendant-leaf Jaccard).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Alignment {
    pub pairs: BTreeMap<String, (String, f64)>,
}

impl Alignment {
    pub fn gold_for(&self, pred_id: &str) -> Option<&str> {
        if pred_id == HYPOTHESIS {
            return Some(HYPOTHESIS);
        }
        self.pairs.get(pred_id).map(|(g, _)| g.as_str())
    }
}

/// Greedy matching of intermediates by descending descendant-leaf Jaccard.
/// Ties go to the smallest gold id, then the smallest predicted id; pairs
/// with zero overlap are never matched. The hypotheses always correspond.
pub fn align(pred: &EntailmentTree, gold: &EntailmentTree) -> Alignment {
    let p_ids = pred.intermediate_ids();
    let g_ids = gold.intermediate_ids();
    let p_leaves: Vec<_> = p_ids.iter().map(|i| pred.descendant_leaves(i)).collect();
    let g_leaves: Vec<_> = g_ids.iter().map(|i| gold.descendant_leaves(i)).collect();
    let mut cands = Vec::new();
    for (pi, pl) in p_leaves.iter().enumerate() {
        for (gi, gl) in g_leaves.iter().enumerate() {
            let j = jaccard(pl, gl);
            if j > 0.0 {
                cands.push((j, gi, pi));
            }
        }
    }
    cands.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| cmp_ids(&g_ids[a.1], &g_ids[b.1]))
            .then_with(|| cmp_ids(&p_ids[a.2], &p_ids[b.2]))
    });
    let mut used_p = vec![false; p_ids.len()];
    let mut used_g = vec![false; g_ids.len()];
    let mut pairs = BTreeMap::new();
    for (j, gi, pi) in cands {
        if used_p[pi] || used_g[gi] {
            continue;
        }
        used_p[pi] = true;
        used_g[gi] = true;
        pairs.insert(p_ids[pi].clone(), (g_ids[gi].clone(), j));
    }
    Alignment { pairs }
}

/// F1 and AllCorrect for one dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Score {
    pub f1: f64,
    pub all_correct: bool,
}

impl Score {
    fn new(correct: usize, n_pred: usize, n_gold: usize) -> Self {
        let all_correct = correct == n_pred && correct == n_gold;
        let f1 = if n_pred == 0 && n_gold == 0 { 1.0 } else { f1(correct, n_pred, n_gold) };
        debug_assert!(!all_correct || f1 == 1.0);
        Score { f1, all_correct }
    }
}

pub fn leaves_score(pred: &EntailmentTree, gold: &EntailmentTree) -> Score {
    let p = pred.leaves();
    let g = gold.leaves();
    Score::new(p.intersection(&g).count(), p.len(), g.len())
}

pub fn steps_score(pred: &EntailmentTree, gold: &EntailmentTree, al: &Alignment) -> Score {
    let key = |ids: &[String], f: &dyn Fn(&str) -> String| {
        let mut v: Vec<String> = ids.iter().map(|s| f(s)).collect();
        v.sort();
        v
    };
    let mut gold_steps: Vec<Option<Vec<String>>> = gold
        .steps
        .iter()
        .map(|s| Some(key(&s.premises, &|id| id.to_string())))
        .collect();
    let mut correct = 0;
    for st in &pred.steps {
        let translate = |id: &str| -> String {
            if id.starts_with('s') {
                id.to_string()
            } else {
                match al.gold_for(id) {
                    Some(g) => g.to_string(),
                    // cannot collide with a gold id
                    None => format!("?{id}"),
                }
            }
        };
        let k = key(&st.premises, &translate);
        if let Some(slot) = gold_steps.iter_mut().find(|g| g.as_ref() == Some(&k)) {
            *slot = None;
            correct += 1;
        }
    }
    Score::new(correct, pred.steps.len(), gold.steps.len())
}

pub fn intermediates_score(
    pred: &EntailmentTree,
    gold: &EntailmentTree,
    al: &Alignment,
    scorer: &dyn Scorer,
    threshold: f64,
) -> Score {
    let n_pred = pred.intermediate_ids().len();
    let n_gold = gold.intermediate_ids().len();
    let correct = al
        .pairs
        .iter()
        .filter(|(p, (g, _))| {
            let (pt, gt) = (pred.text(p).unwrap_or(""), gold.text(g).unwrap_or(""));
            scorer.score(pt, gt) > threshold
        })
        .count();
    Score::new(correct, n_pred, n_gold)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub leaves: Score,
    pub steps: Score,
    pub intermediates: Score,
    pub overall_all_correct: bool,
}

pub fn evaluate(pred: &EntailmentTree, gold: &EntailmentTree, scorer: &dyn Scorer, threshold: f64) -> EvalReport {
    let al = align(pred, gold);
    let leaves = leaves_score(pred, gold);
    let steps = steps_score(pred, gold, &al);
    let intermediates = intermediates_score(pred, gold, &al, scorer, threshold);
    EvalReport {
        leaves,
        steps,
        intermediates,
        overall_all_correct: leaves.all_correct && steps.all_correct && intermediates.all_correct,
    }
}

/// Corpus means, in percent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusReport {
    pub trees: usize,
    pub missing_predictions: usize,
    pub leaves_f1: f64,
    pub leaves_all_correct: f64,
    pub steps_f1: f64,
    pub steps_all_correct: f64,
    pub intermediates_f1: f64,
    pub intermediates_all_correct: f64,
    pub overall_all_correct: f64,
}

pub const CSV_HEADER: &str = "leaves_f1,leaves_all_correct,steps_f1,steps_all_correct,intermediates_f1,intermediates_all_correct,overall_all_correct";

impl CorpusReport {
    pub fn from_reports(reports: &[EvalReport], missing: usize) -> Self {
        let n = (reports.len() + missing).max(1) as f64;
        let mean = |f: &dyn Fn(&EvalReport) -> f64| 100.0 * reports.iter().map(f).sum::<f64>() / n;
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        CorpusReport {
            trees: reports.len() + missing,
            missing_predictions: missing,
            leaves_f1: mean(&|r| r.leaves.f1),
            leaves_all_correct: mean(&|r| b(r.leaves.all_correct)),
            steps_f1: mean(&|r| r.steps.f1),
            steps_all_correct: mean(&|r| b(r.steps.all_correct)),
            intermediates_f1: mean(&|r| r.intermediates.f1),
            intermediates_all_correct: mean(&|r| b(r.intermediates.all_correct)),
            overall_all_correct: mean(&|r| b(r.overall_all_correct)),
        }
    }

    /// Table-ordered values with two decimals.
    pub fn csv_row(&self) -> String {
        [
            self.leaves_f1,
            self.leaves_all_correct,
            self.steps_f1,
            self.steps_all_correct,
            self.intermediates_f1,
            self.intermediates_all_correct,
            self.overall_all_correct,
        ]
        .iter()
        .map(|v| format!("{v:.2}"))
        .collect::<Vec<_>>()
        .join(",")
    }
}

/// Scores predictions against gold trees by id. A gold tree with no
/// prediction scores zero everywhere; a prediction with no gold tree is an
/// input error.
pub fn evaluate_corpus(
    pred: &[EntailmentTree],
    gold: &[EntailmentTree],
    scorer: &dyn Scorer,
    threshold: f64,
) -> Result<CorpusReport> {
    let by_id: HashMap<&str, &EntailmentTree> = pred.iter().map(|t| (t.id.as_str(), t)).collect();
    if by_id.len() != pred.len() {
        return Err(Error::Input("duplicate ids among predicted trees".into()));
    }
    let gold_ids: BTreeSet<&str> = gold.iter().map(|t| t.id.as_str()).collect();
    if let Some(extra) = pred.iter().find(|t| !gold_ids.contains(t.id.as_str())) {
        return Err(Error::Input(format!("predicted tree {} has no gold tree", extra.id)));
    }
    let mut reports = Vec::new();
    let mut missing = 0;
    for g in gold {
        match by_id.get(g.id.as_str()) {
            Some(p) => reports.push(evaluate(p, g, scorer, threshold)),
            None => missing += 1,
        }
    }
    Ok(CorpusReport::from_reports(&reports, missing))
}
