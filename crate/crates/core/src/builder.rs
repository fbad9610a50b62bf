//! Multi-step tree construction around a conclusion generator.
//!
//! The oracle builder keeps the gold structure and regenerates every
//! conclusion; the heuristic builder also chooses which nodes to combine,
//! scoring each available pair by word overlap with the hypothesis.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::token_f1;
use crate::model::{Lmpm, SelectPlan};
use crate::treebank::{cmp_ids, EntailmentTree, Step, Strictness, HYPOTHESIS};
use crate::vocab::{encode_pair, join, tokenize, Vocabulary};

/// Produces a conclusion from two premise texts.
pub trait Generator {
    fn conclude(&self, p1: &str, p2: &str) -> Result<String>;
}

/// Greedy decoding, by default with softmax memory mixing.
pub struct ModelGenerator<'a> {
    pub model: &'a Lmpm,
    pub vocab: &'a Vocabulary,
    pub max_tokens: usize,
    pub plan: SelectPlan,
}

impl<'a> ModelGenerator<'a> {
    pub fn new(model: &'a Lmpm, vocab: &'a Vocabulary) -> Result<Self> {
        if model.config().vocab_size != vocab.len() {
            return Err(Error::Compatibility(format!(
                "model expects {} tokens, vocabulary has {}",
                model.config().vocab_size,
                vocab.len()
            )));
        }
        Ok(ModelGenerator {
            model,
            vocab,
            max_tokens: model.config().max_len - 1,
            plan: SelectPlan::Softmax,
        })
    }

    /// Decodes without the memory, for models trained that way.
    pub fn without_memory(mut self) -> Self {
        self.plan = SelectPlan::Bypass;
        self
    }
}

/// Trims the longer premise until the pair fits the encoder.
fn fit(mut a: Vec<String>, mut b: Vec<String>, max_len: usize) -> (Vec<String>, Vec<String>) {
    while a.len() + b.len() + 4 > max_len && (a.len() > 1 || b.len() > 1) {
        if a.len() >= b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }
    (a, b)
}

impl Generator for ModelGenerator<'_> {
    fn conclude(&self, p1: &str, p2: &str) -> Result<String> {
        let (a, b) = fit(tokenize(p1), tokenize(p2), self.model.config().max_len);
        let input = encode_pair(&a, &b, self.vocab)?;
        let out = self.vocab.decode(&self.model.greedy_decode(&input, &self.plan, self.max_tokens)?);
        if out.is_empty() {
            // An empty conclusion cannot label a node.
            return Ok(format!("{p1} and {p2}"));
        }
        Ok(join(&out))
    }
}

/// Gold structure, generated texts. An n-premise step is generated as a
/// left-fold chain of pairs; only the last link's text is kept.
pub fn oracle_build(gold: &EntailmentTree, gen: &dyn Generator) -> Result<EntailmentTree> {
    let mut texts: BTreeMap<String, String> = gold.sentences.iter().cloned().collect();
    let mut steps = Vec::with_capacity(gold.steps.len());
    for st in &gold.steps {
        let text_of = |id: &str, texts: &BTreeMap<String, String>| {
            texts
                .get(id)
                .cloned()
                .ok_or_else(|| Error::Input(format!("tree {}: premise {id} has no text yet", gold.id)))
        };
        let mut acc = text_of(&st.premises[0], &texts)?;
        for p in &st.premises[1..] {
            acc = gen.conclude(&acc, &text_of(p, &texts)?)?;
        }
        texts.insert(st.conclusion_id.clone(), acc.clone());
        steps.push(Step {
            premises: st.premises.clone(),
            conclusion_id: st.conclusion_id.clone(),
            conclusion_text: acc,
        });
    }
    let tree = EntailmentTree {
        steps,
        ..gold.clone()
    };
    tree.validate(Strictness::Structure)?;
    Ok(tree)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicConfig {
    /// Weight of the overlap between the two candidates.
    pub w_pair: f64,
    /// Weight of the overlap between the candidates and the hypothesis.
    pub w_hyp: f64,
    /// Stop once a conclusion reaches this token F1 against the hypothesis.
    pub stop_threshold: f64,
    /// Step cap; `None` means twice the number of sentences.
    pub max_steps: Option<usize>,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            w_pair: 0.3,
            w_hyp: 0.7,
            stop_threshold: 0.75,
            max_steps: None,
        }
    }
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_pair", self.w_pair), ("w_hyp", self.w_hyp), ("stop_threshold", self.stop_threshold)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "of", "to", "in", "on", "at", "and", "or", "for", "by",
    "with", "as", "that", "this", "it", "its", "if", "then",
];

pub fn content_words(text: &str) -> BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

/// Score of combining two nodes given the hypothesis words.
pub fn pair_score(a: &str, b: &str, hyp: &BTreeSet<String>, cfg: &HeuristicConfig) -> f64 {
    let (wa, wb) = (content_words(a), content_words(b));
    let both: BTreeSet<String> = wa.union(&wb).cloned().collect();
    cfg.w_pair * jaccard(&wa, &wb) + cfg.w_hyp * jaccard(&both, hyp)
}

/// Best pair among `available`, ties to the smallest id pair in natural
/// id order.
pub fn select_pair(available: &[(String, String)], hyp: &str, cfg: &HeuristicConfig) -> Option<(usize, usize)> {
    let hyp_words = content_words(hyp);
    let mut order: Vec<usize> = (0..available.len()).collect();
    order.sort_by(|&i, &j| cmp_ids(&available[i].0, &available[j].0));
    let mut best: Option<(f64, usize, usize)> = None;
    for (x, &i) in order.iter().enumerate() {
        for &j in &order[x + 1..] {
            let s = pair_score(&available[i].1, &available[j].1, &hyp_words, cfg);
            if best.map_or(true, |(b, _, _)| s > b) {
                best = Some((s, i, j));
            }
        }
    }
    best.map(|(_, i, j)| (i, j))
}

/// Builds a tree by repeatedly combining the best-scoring pair of available
/// nodes. Steps that do not feed the final conclusion are dropped.
pub fn heuristic_build(
    id: &str,
    hypothesis: &str,
    sentences: &[(String, String)],
    gen: &dyn Generator,
    cfg: &HeuristicConfig,
) -> Result<EntailmentTree> {
    cfg.validate()?;
    if sentences.len() < 2 {
        return Err(Error::Input(format!("tree {id}: need at least two sentences")));
    }
    let cap = cfg.max_steps.unwrap_or(2 * sentences.len());
    let mut available: Vec<(String, String)> = sentences.to_vec();
    let mut steps: Vec<Step> = Vec::new();
    loop {
        let (i, j) = select_pair(&available, hypothesis, cfg).expect("two or more nodes");
        let (a, b) = if cmp_ids(&available[i].0, &available[j].0).is_le() { (i, j) } else { (j, i) };
        let text = gen.conclude(&available[a].1, &available[b].1)?;
        let new_id = format!("int{}", steps.len() + 1);
        steps.push(Step {
            premises: vec![available[a].0.clone(), available[b].0.clone()],
            conclusion_id: new_id.clone(),
            conclusion_text: text.clone(),
        });
        let (hi, lo) = (a.max(b), a.min(b));
        available.remove(hi);
        available.remove(lo);
        available.push((new_id, text.clone()));
        let done = token_f1(&text, hypothesis) >= cfg.stop_threshold || available.len() == 1 || steps.len() >= cap;
        if done {
            break;
        }
    }

    let last = steps.len() - 1;
    steps[last].conclusion_id = HYPOTHESIS.to_string();
    // keep only ancestors of the final step
    let mut keep = HashSet::new();
    let mut stack = vec![last];
    while let Some(k) = stack.pop() {
        if !keep.insert(k) {
            continue;
        }
        for p in &steps[k].premises {
            if let Some(q) = steps.iter().position(|s| &s.conclusion_id == p) {
                stack.push(q);
            }
        }
    }
    let kept: Vec<Step> = steps
        .into_iter()
        .enumerate()
        .filter(|(k, _)| keep.contains(k))
        .map(|(_, s)| s)
        .collect();

    let mut used: Vec<(String, String)> = sentences.to_vec();
    used.sort_by(|x, y| cmp_ids(&x.0, &y.0));
    let tree = EntailmentTree {
        id: id.to_string(),
        hypothesis: hypothesis.to_string(),
        sentences: used,
        steps: renumber(kept),
        task: crate::treebank::TaskSetting::Task2,
        step_types: None,
    };
    tree.validate(Strictness::Structure)?;
    Ok(tree)
}

/// Renames intermediates to int1, int2, … in step order.
fn renumber(steps: Vec<Step>) -> Vec<Step> {
    let mut map = BTreeMap::new();
    for (k, s) in steps.iter().filter(|s| s.conclusion_id != HYPOTHESIS).enumerate() {
        map.insert(s.conclusion_id.clone(), format!("int{}", k + 1));
    }
    let rename = |id: &String| map.get(id).cloned().unwrap_or_else(|| id.clone());
    steps
        .iter()
        .map(|s| Step {
            premises: s.premises.iter().map(rename).collect(),
            conclusion_id: rename(&s.conclusion_id),
            conclusion_text: s.conclusion_text.clone(),
        })
        .collect()
}

/// Heuristic build over a gold tree's inputs (its hypothesis, sentences
/// and task setting).
pub fn heuristic_build_for(gold: &EntailmentTree, gen: &dyn Generator, cfg: &HeuristicConfig) -> Result<EntailmentTree> {
    let mut t = heuristic_build(&gold.id, &gold.hypothesis, &gold.sentences, gen, cfg)?;
    t.task = gold.task;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{evaluate, TokenF1};
    use crate::treebank::parse_tree;

    /// Concatenates its premises.
    struct Concat;
    impl Generator for Concat {
        fn conclude(&self, p1: &str, p2: &str) -> Result<String> {
            Ok(format!("{p1} {p2}"))
        }
    }

    /// Always returns the same text.
    struct Fixed(&'static str);
    impl Generator for Fixed {
        fn conclude(&self, _: &str, _: &str) -> Result<String> {
            Ok(self.0.to_string())
        }
    }

    fn sents(xs: &[&str]) -> Vec<(String, String)> {
        xs.iter().enumerate().map(|(i, s)| (format!("s{}", i + 1), s.to_string())).collect()
    }

    #[test]
    fn two_sentences_give_one_step() {
        let t = heuristic_build("x", "zzz", &sents(&["a b", "c d"]), &Concat, &HeuristicConfig::default()).unwrap();
        assert_eq!(t.steps.len(), 1);
        assert_eq!(t.steps[0].conclusion_id, HYPOTHESIS);
    }

    #[test]
    fn first_pair_by_hypothesis_overlap() {
        let s = sents(&["the wolf eats meat", "a wolf hunts at night", "rocks are hard"]);
        let hyp = "the wolf eats meat at night hunts";
        let hw = content_words(hyp);
        let cfg = HeuristicConfig::default();
        assert!(pair_score(&s[0].1, &s[1].1, &hw, &cfg) > pair_score(&s[0].1, &s[2].1, &hw, &cfg));
        assert_eq!(select_pair(&s, hyp, &cfg), Some((0, 1)));
    }

    #[test]
    fn ties_go_to_the_smallest_pair() {
        let s = sents(&["x", "x", "x"]);
        assert_eq!(select_pair(&s, "x", &HeuristicConfig::default()), Some((0, 1)));
        let mut s = sents(&["x"; 11]);
        s.swap(1, 10);
        // natural order puts s2 before s10
        let (i, j) = select_pair(&s, "x", &HeuristicConfig::default()).unwrap();
        assert_eq!((s[i].0.as_str(), s[j].0.as_str()), ("s1", "s2"));
    }

    #[test]
    fn distractors_are_not_used() {
        let mut s = sents(&["a wolf is a kind of predator", "a predator needs water"]);
        for (i, d) in ["a deer is near a rabbit", "a fish is near a plant", "ice is near steam"].iter().enumerate() {
            s.push((format!("s{}", i + 3), d.to_string()));
        }
        let t = heuristic_build("t2", "a wolf needs water", &s, &Fixed("a wolf needs water"), &HeuristicConfig::default())
            .unwrap();
        assert_eq!(t.leaves().into_iter().collect::<Vec<_>>(), ["s1", "s2"]);
        assert_eq!(t.steps.len(), 1);
    }

    #[test]
    fn stop_prunes_unused_steps() {
        let s = sents(&["p q", "p q", "r t", "h h"]);
        // Concat never reaches the hypothesis; the cap ends the loop
        let cfg = HeuristicConfig {
            max_steps: Some(2),
            ..HeuristicConfig::default()
        };
        let t = heuristic_build("c", "h", &s, &Concat, &cfg).unwrap();
        assert!(t.steps.len() <= 2);
        t.validate(Strictness::Structure).unwrap();
        let t = heuristic_build("c", "h", &s, &Concat, &HeuristicConfig::default()).unwrap();
        assert_eq!(t.steps.len(), 3);
    }

    #[test]
    fn oracle_keeps_structure() {
        let gold = parse_tree(
            r#"{"id":"g","hypothesis":"a b c","sentences":{"s1":"a","s2":"b","s3":"c"},"proof":"s1 & s2 -> int1: a b; int1 & s3 -> hypothesis"}"#,
            Strictness::Gold,
        )
        .unwrap();
        let pred = oracle_build(&gold, &Concat).unwrap();
        let r = evaluate(&pred, &gold, &TokenF1, 0.7);
        assert!(r.overall_all_correct);
        let three = parse_tree(
            r#"{"id":"g","hypothesis":"a b c","sentences":{"s1":"a","s2":"b","s3":"c"},"proof":"s1 & s2 & s3 -> hypothesis"}"#,
            Strictness::Gold,
        )
        .unwrap();
        let pred = oracle_build(&three, &Concat).unwrap();
        assert_eq!(pred.steps[0].conclusion_text, "a b c");
    }
}
