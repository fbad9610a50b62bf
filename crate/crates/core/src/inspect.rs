//! Per-example slot weights and how well slots line up with inference types.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::abstraction::AbstractRecord;
use crate::error::{Error, Result};
use crate::model::Lmpm;
use crate::treebank::{extract_pairs, EntailmentTree};
use crate::vocab::{encode_pair, tokenize, Vocabulary};

/// A premise pair with its inference-type label.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub id: String,
    pub kind: String,
    pub p1: String,
    pub p2: String,
}

pub fn probes_from_records(records: &[AbstractRecord]) -> Result<Vec<Probe>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let id = r.id.clone().unwrap_or_else(|| format!("{}", i + 1));
            let kind = r
                .kind
                .clone()
                .ok_or_else(|| Error::Input(format!("record {id} has no \"type\" label")))?;
            Ok(Probe {
                id,
                kind,
                p1: r.p1.clone(),
                p2: r.p2.clone(),
            })
        })
        .collect()
}

/// One probe per gold step with a conclusion; ids are `tree#k`.
pub fn probes_from_trees(trees: &[EntailmentTree]) -> Result<Vec<Probe>> {
    let mut out = Vec::new();
    for t in trees {
        if t.step_types.is_none() {
            return Err(Error::Input(format!("tree {} has no step_types", t.id)));
        }
        for (k, p) in extract_pairs(t).into_iter().enumerate() {
            let kind = p
                .step_type
                .ok_or_else(|| Error::Input(format!("tree {}: step {} has no type", t.id, k + 1)))?;
            out.push(Probe {
                id: format!("{}#{}", t.id, k + 1),
                kind,
                p1: p.p1,
                p2: p.p2,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaRow {
    pub example_id: String,
    pub inference_type: String,
    pub alpha: Vec<f64>,
}

/// Softmax slot weights for every probe.
pub fn alpha_rows(model: &Lmpm, vocab: &Vocabulary, probes: &[Probe]) -> Result<Vec<AlphaRow>> {
    probes
        .iter()
        .map(|p| {
            let input = encode_pair(&tokenize(&p.p1), &tokenize(&p.p2), vocab)?;
            let sel = model.soft_selection(&input)?;
            Ok(AlphaRow {
                example_id: p.id.clone(),
                inference_type: p.kind.clone(),
                alpha: sel.alpha.data().to_vec(),
            })
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn rows_csv(rows: &[AlphaRow]) -> String {
    let slots = rows.first().map_or(0, |r| r.alpha.len());
    let mut s = String::from("example_id,inference_type");
    for k in 1..=slots {
        s.push_str(&format!(",alpha_{k}"));
    }
    s.push('\n');
    for r in rows {
        s.push_str(&csv_field(&r.example_id));
        s.push(',');
        s.push_str(&csv_field(&r.inference_type));
        for a in &r.alpha {
            s.push_str(&format!(",{a:.6}"));
        }
        s.push('\n');
    }
    s
}

/// Mean weight per slot for each inference type.
pub fn mean_by_type(rows: &[AlphaRow]) -> BTreeMap<String, Vec<f64>> {
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for r in rows {
        let e = sums
            .entry(r.inference_type.clone())
            .or_insert_with(|| (vec![0.0; r.alpha.len()], 0));
        for (s, a) in e.0.iter_mut().zip(&r.alpha) {
            *s += a;
        }
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(k, (v, n))| (k, v.into_iter().map(|x| x / n as f64).collect()))
        .collect()
}

pub fn summary_csv(rows: &[AlphaRow]) -> String {
    let mut s = String::from("inference_type,slot,mean_alpha\n");
    for (k, means) in mean_by_type(rows) {
        for (slot, m) in means.iter().enumerate() {
            s.push_str(&format!("{},{},{m:.6}\n", csv_field(&k), slot + 1));
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TypePurity {
    /// 1-based slot chosen most often.
    pub majority_slot: usize,
    pub purity: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PurityReport {
    pub types: BTreeMap<String, TypePurity>,
    /// Whether every type has a different majority slot.
    pub distinct_majorities: bool,
}

impl PurityReport {
    /// Every type reaches `min` purity and no two share a majority slot. A
    /// memory that sends everything to one slot is pure but not distinct.
    pub fn passes(&self, min: f64) -> bool {
        self.distinct_majorities && self.types.values().all(|t| t.purity >= min)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Fraction of each type's examples whose argmax slot is that type's most
/// common argmax (ties to the lower slot).
pub fn purity(rows: &[AlphaRow]) -> PurityReport {
    let mut counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for r in rows {
        let c = counts
            .entry(r.inference_type.clone())
            .or_insert_with(|| vec![0; r.alpha.len()]);
        c[argmax(&r.alpha)] += 1;
    }
    let mut types = BTreeMap::new();
    for (k, c) in counts {
        let n: usize = c.iter().sum();
        let mut m = 0;
        for (i, &x) in c.iter().enumerate() {
            if x > c[m] {
                m = i;
            }
        }
        types.insert(
            k,
            TypePurity {
                majority_slot: m + 1,
                purity: c[m] as f64 / n as f64,
                count: n,
            },
        );
    }
    let mut slots: Vec<usize> = types.values().map(|t| t.majority_slot).collect();
    slots.sort_unstable();
    slots.dedup();
    let distinct_majorities = slots.len() == types.len();
    PurityReport {
        types,
        distinct_majorities,
    }
}
