//! Entailment trees: the treebank line format, proof strings, validation,
//! n-premise binarization and fine-tuning pair extraction.
//!
//! A proof is a `;`-separated list of steps, each
//! `id & id [& id…] -> conclusion[: text]`. Conclusions are `int<k>` or
//! `hypothesis`; leaves are `s<k>`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result, TreeError};

pub const HYPOTHESIS: &str = "hypothesis";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Sentence(u32),
    Intermediate(u32),
    Hypothesis,
}

impl NodeKind {
    pub fn parse(id: &str) -> Option<NodeKind> {
        fn num(s: &str) -> Option<u32> {
            (!s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())).then(|| s.parse().ok())?
        }
        if id == HYPOTHESIS {
            Some(NodeKind::Hypothesis)
        } else if let Some(n) = id.strip_prefix("int") {
            num(n).map(NodeKind::Intermediate)
        } else if let Some(n) = id.strip_prefix('s') {
            num(n).map(NodeKind::Sentence)
        } else {
            None
        }
    }
}

/// Sentences before intermediates before the hypothesis, numbers compared
/// numerically (`s2 < s10`). Unparseable ids sort last, by string.
pub fn cmp_ids(a: &str, b: &str) -> Ordering {
    match (NodeKind::parse(a), NodeKind::parse(b)) {
        (Some(x), Some(y)) => x.cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(b),
    }
}

pub fn is_leaf_id(id: &str) -> bool {
    matches!(NodeKind::parse(id), Some(NodeKind::Sentence(_)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub premises: Vec<String>,
    pub conclusion_id: String,
    pub conclusion_text: String,
}

impl Step {
    pub fn new(premises: &[&str], conclusion_id: &str, text: &str) -> Self {
        Step {
            premises: premises.iter().map(|s| s.to_string()).collect(),
            conclusion_id: conclusion_id.to_string(),
            conclusion_text: text.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskSetting {
    #[default]
    Task1,
    Task2,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntailmentTree {
    pub id: String,
    pub hypothesis: String,
    /// Leaf sentences in natural id order.
    pub sentences: Vec<(String, String)>,
    pub steps: Vec<Step>,
    pub task: TaskSetting,
    /// Optional inference-type label per step, passed through untouched.
    pub step_types: Option<Vec<String>>,
}

/// How strictly a tree is checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strictness {
    /// Structural invariants only; used for predictions.
    Structure,
    /// Also requires every task1 sentence to be a used leaf.
    Gold,
}

impl EntailmentTree {
    pub fn sentence(&self, id: &str) -> Option<&str> {
        self.sentences.iter().find(|(k, _)| k == id).map(|(_, v)| v.as_str())
    }

    /// Text of any node: a sentence, an intermediate, or the hypothesis.
    pub fn text(&self, id: &str) -> Option<&str> {
        if let Some(s) = self.sentence(id) {
            return Some(s);
        }
        if id == HYPOTHESIS {
            return Some(&self.hypothesis);
        }
        self.steps
            .iter()
            .find(|s| s.conclusion_id == id)
            .map(|s| s.conclusion_text.as_str())
    }

    pub fn step_for(&self, id: &str) -> Option<&Step> {
        self.steps.iter().find(|s| s.conclusion_id == id)
    }

    /// Sentence ids used as premises anywhere in the tree.
    pub fn leaves(&self) -> BTreeSet<String> {
        self.steps
            .iter()
            .flat_map(|s| s.premises.iter())
            .filter(|p| is_leaf_id(p))
            .cloned()
            .collect()
    }

    /// Leaf ids under `id` (the id itself for a sentence).
    pub fn descendant_leaves(&self, id: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id.to_string()];
        let mut seen = HashSet::new();
        while let Some(n) = stack.pop() {
            if !seen.insert(n.clone()) {
                continue;
            }
            if is_leaf_id(&n) {
                out.insert(n);
            } else if let Some(step) = self.step_for(&n) {
                stack.extend(step.premises.iter().cloned());
            }
        }
        out
    }

    pub fn intermediate_ids(&self) -> Vec<String> {
        self.steps
            .iter()
            .map(|s| s.conclusion_id.clone())
            .filter(|id| id != HYPOTHESIS)
            .collect()
    }

    pub fn validate(&self, strictness: Strictness) -> std::result::Result<(), TreeError> {
        let sentence_ids: HashSet<&str> = self.sentences.iter().map(|(k, _)| k.as_str()).collect();
        for (k, _) in &self.sentences {
            if !is_leaf_id(k) {
                return Err(TreeError::BadId(k.clone()));
            }
        }
        let mut concluded_at: HashMap<&str, usize> = HashMap::new();
        let mut hyp_steps = 0;
        for (i, st) in self.steps.iter().enumerate() {
            match NodeKind::parse(&st.conclusion_id) {
                Some(NodeKind::Intermediate(_)) => {}
                Some(NodeKind::Hypothesis) => hyp_steps += 1,
                Some(NodeKind::Sentence(_)) => {
                    return Err(TreeError::BadStep {
                        step: i + 1,
                        reason: format!("a step cannot conclude sentence {}", st.conclusion_id),
                    })
                }
                None => return Err(TreeError::BadId(st.conclusion_id.clone())),
            }
            if concluded_at.insert(&st.conclusion_id, i).is_some() && st.conclusion_id != HYPOTHESIS {
                return Err(TreeError::DuplicateConclusion(st.conclusion_id.clone()));
            }
            if st.conclusion_id != HYPOTHESIS && st.conclusion_text.trim().is_empty() {
                return Err(TreeError::BadStep {
                    step: i + 1,
                    reason: format!("{} has no text", st.conclusion_id),
                });
            }
        }
        match hyp_steps {
            0 => return Err(TreeError::MissingHypothesis),
            1 => {}
            _ => return Err(TreeError::DuplicateHypothesis),
        }

        let mut parent: HashMap<&str, usize> = HashMap::new();
        for (i, st) in self.steps.iter().enumerate() {
            if st.premises.len() < 2 {
                return Err(TreeError::BadStep {
                    step: i + 1,
                    reason: "a step needs at least two premises".into(),
                });
            }
            let mut seen = HashSet::new();
            for p in &st.premises {
                if NodeKind::parse(p).is_none() {
                    return Err(TreeError::BadId(p.clone()));
                }
                if !seen.insert(p.as_str()) {
                    return Err(TreeError::BadStep {
                        step: i + 1,
                        reason: format!("premise {p} repeated"),
                    });
                }
                if p == HYPOTHESIS {
                    return Err(TreeError::Cycle(p.clone()));
                }
                if is_leaf_id(p) {
                    if !sentence_ids.contains(p.as_str()) {
                        return Err(TreeError::DanglingId {
                            step: i + 1,
                            id: p.clone(),
                        });
                    }
                } else {
                    match concluded_at.get(p.as_str()) {
                        None => {
                            return Err(TreeError::DanglingId {
                                step: i + 1,
                                id: p.clone(),
                            })
                        }
                        Some(&j) if j >= i => {
                            return Err(if self.reaches(j, &st.conclusion_id) {
                                TreeError::Cycle(p.clone())
                            } else {
                                TreeError::BadStep {
                                    step: i + 1,
                                    reason: format!("{p} is used before the step that concludes it"),
                                }
                            });
                        }
                        Some(_) => {}
                    }
                }
                if parent.insert(p, i).is_some() {
                    return Err(TreeError::MultipleParents(p.clone()));
                }
            }
        }
        for st in &self.steps {
            if st.conclusion_id != HYPOTHESIS && !parent.contains_key(st.conclusion_id.as_str()) {
                return Err(TreeError::Orphan(st.conclusion_id.clone()));
            }
        }
        if strictness == Strictness::Gold && self.task == TaskSetting::Task1 {
            let unused: Vec<&str> = self
                .sentences
                .iter()
                .map(|(k, _)| k.as_str())
                .filter(|k| !parent.contains_key(k))
                .collect();
            if !unused.is_empty() {
                return Err(TreeError::Task1Leaves(unused.join(", ")));
            }
        }
        Ok(())
    }

    /// Whether step `from`'s premises lead (through conclusions) to `target`.
    fn reaches(&self, from: usize, target: &str) -> bool {
        let mut stack = vec![from];
        let mut seen = HashSet::new();
        while let Some(i) = stack.pop() {
            if !seen.insert(i) {
                continue;
            }
            for p in &self.steps[i].premises {
                if p == target {
                    return true;
                }
                if let Some(j) = self.steps.iter().position(|s| &s.conclusion_id == p) {
                    stack.push(j);
                }
            }
        }
        false
    }

    pub fn proof_string(&self) -> Result<String> {
        let mut parts = Vec::with_capacity(self.steps.len());
        for st in &self.steps {
            let mut s = st.premises.join(" & ");
            s.push_str(" -> ");
            s.push_str(&st.conclusion_id);
            let show = st.conclusion_id != HYPOTHESIS || st.conclusion_text != self.hypothesis;
            if show && !st.conclusion_text.is_empty() {
                if st.conclusion_text.contains(';') || st.conclusion_text.contains("->") {
                    return Err(Error::Input(format!(
                        "conclusion text of {} cannot contain ';' or '->'",
                        st.conclusion_id
                    )));
                }
                s.push_str(": ");
                s.push_str(&st.conclusion_text);
            }
            parts.push(s);
        }
        Ok(parts.join("; "))
    }

    pub fn to_record(&self) -> Result<Value> {
        let mut sentences = Map::new();
        for (k, v) in &self.sentences {
            sentences.insert(k.clone(), Value::String(v.clone()));
        }
        let mut rec = Map::new();
        rec.insert("id".into(), Value::String(self.id.clone()));
        rec.insert("hypothesis".into(), Value::String(self.hypothesis.clone()));
        rec.insert("sentences".into(), Value::Object(sentences));
        rec.insert("proof".into(), Value::String(self.proof_string()?));
        rec.insert("task".into(), serde_json::to_value(self.task)?);
        if let Some(t) = &self.step_types {
            rec.insert("step_types".into(), serde_json::to_value(t)?);
        }
        Ok(Value::Object(rec))
    }

    /// One JSON line, sentences in natural id order.
    pub fn serialize(&self) -> Result<String> {
        // serde_json's map sorts keys lexically; emit sentences by hand so
        // s2 precedes s10.
        let mut out = String::from("{");
        out.push_str(&format!("\"id\":{}", serde_json::to_string(&self.id)?));
        out.push_str(&format!(",\"hypothesis\":{}", serde_json::to_string(&self.hypothesis)?));
        out.push_str(",\"sentences\":{");
        for (i, (k, v)) in self.sentences.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}:{}", serde_json::to_string(k)?, serde_json::to_string(v)?));
        }
        out.push('}');
        out.push_str(&format!(",\"proof\":{}", serde_json::to_string(&self.proof_string()?)?));
        out.push_str(&format!(",\"task\":{}", serde_json::to_string(&self.task)?));
        if let Some(t) = &self.step_types {
            out.push_str(&format!(",\"step_types\":{}", serde_json::to_string(t)?));
        }
        out.push('}');
        Ok(out)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    id: String,
    hypothesis: String,
    sentences: BTreeMap<String, String>,
    proof: String,
    #[serde(default)]
    task: TaskSetting,
    #[serde(default)]
    step_types: Option<Vec<String>>,
}

/// Parses the proof grammar without validating the tree.
pub fn parse_proof(proof: &str, hypothesis: &str) -> std::result::Result<Vec<Step>, TreeError> {
    let mut steps = Vec::new();
    for (i, raw) in proof.split(';').enumerate() {
        let raw = raw.trim();
        if raw.is_empty() {
            if i == 0 {
                return Err(TreeError::Syntax("empty proof".into()));
            }
            continue;
        }
        let (lhs, rhs) = raw
            .split_once("->")
            .ok_or_else(|| TreeError::Syntax(format!("step {} has no '->': {raw:?}", i + 1)))?;
        let premises: Vec<String> = lhs.split('&').map(|p| p.trim().to_string()).collect();
        if premises.iter().any(String::is_empty) {
            return Err(TreeError::Syntax(format!("step {} has an empty premise", i + 1)));
        }
        let (cid, text) = match rhs.split_once(':') {
            Some((c, t)) => (c.trim(), Some(t.trim())),
            None => (rhs.trim(), None),
        };
        for id in premises.iter().map(String::as_str).chain([cid]) {
            if NodeKind::parse(id).is_none() {
                return Err(TreeError::BadId(id.to_string()));
            }
        }
        let text = match (cid == HYPOTHESIS, text) {
            (_, Some(t)) => t.to_string(),
            (true, None) => hypothesis.to_string(),
            (false, None) => String::new(),
        };
        steps.push(Step {
            premises,
            conclusion_id: cid.to_string(),
            conclusion_text: text,
        });
    }
    Ok(steps)
}

pub fn parse_tree(line: &str, strictness: Strictness) -> Result<EntailmentTree> {
    let rec: RecordIn = serde_json::from_str(line)?;
    let mut sentences: Vec<(String, String)> = rec.sentences.into_iter().collect();
    sentences.sort_by(|a, b| cmp_ids(&a.0, &b.0));
    let steps = parse_proof(&rec.proof, &rec.hypothesis)?;
    let tree = EntailmentTree {
        id: rec.id,
        hypothesis: rec.hypothesis,
        sentences,
        steps,
        task: rec.task,
        step_types: rec.step_types,
    };
    tree.validate(strictness)?;
    Ok(tree)
}

/// Every non-blank line of a treebank file; errors carry the line number.
pub fn parse_treebank(text: &str, strictness: Strictness) -> Result<Vec<EntailmentTree>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_tree(line, strictness).map_err(|e| Error::Line {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn serialize_treebank(trees: &[EntailmentTree]) -> Result<String> {
    let mut s = String::new();
    for t in trees {
        s.push_str(&t.serialize()?);
        s.push('\n');
    }
    Ok(s)
}

/// Auxiliary id for the k-th (0-based) fold result of conclusion `id`.
pub fn aux_id(id: &str, k: usize) -> String {
    let mut s = id.to_string();
    let mut k = k;
    // a..z, then aa, ab… for very wide steps
    let mut suffix = Vec::new();
    loop {
        suffix.push((b'a' + (k % 26) as u8) as char);
        if k < 26 {
            break;
        }
        k = k / 26 - 1;
    }
    s.extend(suffix.iter().rev());
    s
}

/// Left fold: `(p1,p2)→aux1, (aux1,p3)→aux2, …`; the last step keeps the
/// original id and text, auxiliary texts are empty.
pub fn binarize(step: &Step) -> Vec<Step> {
    let n = step.premises.len();
    if n <= 2 {
        return vec![step.clone()];
    }
    let mut out = Vec::with_capacity(n - 1);
    let mut acc = step.premises[0].clone();
    for (k, p) in step.premises[1..].iter().enumerate() {
        let last = k == n - 2;
        let id = if last {
            step.conclusion_id.clone()
        } else {
            aux_id(&step.conclusion_id, k)
        };
        out.push(Step {
            premises: vec![acc.clone(), p.clone()],
            conclusion_id: id.clone(),
            conclusion_text: if last { step.conclusion_text.clone() } else { String::new() },
        });
        acc = id;
    }
    out
}

pub fn binarize_tree(tree: &EntailmentTree) -> Vec<Step> {
    tree.steps.iter().flat_map(binarize).collect()
}

/// (p1, p2, conclusion) text triples for fine-tuning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub p1: String,
    pub p2: String,
    pub conclusion: String,
    pub step_type: Option<String>,
}

/// One pair per binarized step with a gold conclusion. A premise that is an
/// auxiliary fold node has no gold text; it is rendered as its own premises'
/// texts joined by " and ".
pub fn extract_pairs(tree: &EntailmentTree) -> Vec<Pair> {
    let mut texts: HashMap<String, String> = tree.sentences.iter().cloned().collect();
    let mut out = Vec::new();
    for (i, st) in tree.steps.iter().enumerate() {
        let ty = tree.step_types.as_ref().and_then(|t| t.get(i)).cloned();
        for b in binarize(st) {
            let p: Vec<String> = b
                .premises
                .iter()
                .map(|id| texts.get(id).cloned().unwrap_or_default())
                .collect();
            let text = if b.conclusion_text.is_empty() {
                format!("{} and {}", p[0], p[1])
            } else {
                b.conclusion_text.clone()
            };
            if !b.conclusion_text.is_empty() {
                out.push(Pair {
                    p1: p[0].clone(),
                    p2: p[1].clone(),
                    conclusion: b.conclusion_text.clone(),
                    step_type: ty.clone(),
                });
            }
            texts.insert(b.conclusion_id.clone(), text);
        }
    }
    out
}
