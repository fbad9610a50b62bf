//! Regenerates the synthetic fixtures under `fixtures/`.
//!
//! `cargo run -p lmpm-core --example make_fixtures -- <out_dir>`
//!
//! Everything is drawn from one seeded generator, so the output is stable.

use std::fs;
use std::path::{Path, PathBuf};

use lmpm_core::abstraction::{extract_spans, RawTriple, RuleTagger, Tagger};
use lmpm_core::autodiff::Rng;
use lmpm_core::vocab::tokenize;
use serde_json::json;

const SEED: u64 = 2024;

// Pre-training entities: society and history.
const HISTORY: &[&str] = &[
    "primitive society", "feudal society", "slave society", "capitalist society", "socialist society",
    "the kingdom", "an empire", "the village", "a tribe", "the city", "agriculture", "farming", "trade",
    "the market", "a craft", "the family", "social development", "human history", "the economy", "the state",
    "an army", "the government", "religion", "culture", "civilization", "the population", "wealth", "money",
    "labor", "land", "industry", "ancient trade", "modern industry", "tribal culture", "urban culture",
    "rural land", "the king", "a nation", "property", "slavery", "the revolution", "an era", "the period",
];

// Treebank entities: elementary science.
const SCIENCE: &[&str] = &[
    "a wolf", "a predator", "prey", "a deer", "a rabbit", "a mammal", "a bird", "an owl", "an eagle", "a fish",
    "a shark", "a whale", "a frog", "a snake", "a reptile", "an insect", "a bee", "a butterfly", "a plant",
    "a tree", "a flower", "the root", "the stem", "a leaf", "a seed", "water", "food", "energy", "the sun",
    "oxygen", "soil", "nutrients", "heat", "ice", "steam", "a metal", "iron", "copper", "a magnet",
    "electricity", "a circuit", "a battery", "the earth", "the moon", "a planet", "the ocean", "a river",
    "a habitat", "a forest", "fur", "feathers", "a shell", "an egg", "a nest", "gravity", "motion",
    "a thermometer", "temperature", "salt", "sugar",
];

const VERBS: &[&str] = &["needs", "has", "produces", "requires", "uses", "is a part of", "is a form of"];
const KINDS: &[&str] = &["kind", "type"];
const RELATIONS: &[&str] = &["stage", "part", "form"];
const IF_VERBS: &[&str] = &["has", "needs", "uses"];
const THEN_VERBS: &[&str] = &["gets", "loses", "produces", "gives"];

fn pick<'a>(rng: &mut Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.below(xs.len())]
}

/// `n` distinct entities.
fn entities<'a>(rng: &mut Rng, pool: &[&'a str], n: usize) -> Vec<&'a str> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    rng.shuffle(&mut idx);
    idx[..n].iter().map(|&i| pool[i]).collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Template {
    Substitution,
    Conjunction,
    IfThen,
}

impl Template {
    const ALL: [Template; 3] = [Template::Substitution, Template::Conjunction, Template::IfThen];

    fn name(self) -> &'static str {
        match self {
            Template::Substitution => "substitution",
            Template::Conjunction => "conjunction",
            Template::IfThen => "if-then",
        }
    }

    fn instance(self, rng: &mut Rng, pool: &[&str]) -> (String, String, String) {
        match self {
            Template::Substitution => {
                let e = entities(rng, pool, 3);
                let (k, v) = (pick(rng, KINDS), pick(rng, VERBS));
                (
                    format!("{} is a {k} of {}", e[0], e[1]),
                    format!("{} {v} {}", e[1], e[2]),
                    format!("{} {v} {}", e[0], e[2]),
                )
            }
            Template::Conjunction => {
                let e = entities(rng, pool, 3);
                let r = pick(rng, RELATIONS);
                (
                    format!("{} is a {r} of {}", e[0], e[1]),
                    format!("{} is a {r} of {}", e[2], e[1]),
                    format!("{} and {} are {r}s of {}", e[0], e[2], e[1]),
                )
            }
            Template::IfThen => {
                let e = entities(rng, pool, 3);
                let (a, b) = (pick(rng, IF_VERBS), pick(rng, THEN_VERBS));
                (
                    format!("if {} {a} {} then {} {b} {}", e[0], e[1], e[0], e[2]),
                    format!("{} {a} {}", e[0], e[1]),
                    format!("{} {b} {}", e[0], e[2]),
                )
            }
        }
    }
}

fn check_entities(tagger: &RuleTagger, pool: &[&str]) {
    for e in pool {
        let toks = tokenize(e);
        let spans = extract_spans(&tagger.tag(&toks));
        assert!(
            spans.len() == 1 && spans[0].start == 0 && spans[0].end == toks.len(),
            "{e:?} is not a single entity span"
        );
    }
}

fn write(dir: &Path, name: &str, body: &str) {
    let path = dir.join(name);
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).unwrap();
    }
    fs::write(&path, body).unwrap();
    println!("wrote {}", path.display());
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).unwrap() + "\n").collect()
}

fn pretrain_corpus(rng: &mut Rng) -> Vec<RawTriple> {
    let mut out = Vec::new();
    for t in Template::ALL {
        for i in 0..20 {
            let (p1, p2, c) = t.instance(rng, HISTORY);
            out.push(RawTriple {
                id: Some(format!("{}-{i:02}", t.name())),
                p1,
                p2,
                c,
                kind: Some(t.name().to_string()),
            });
        }
    }
    out
}

/// A tree record in the treebank line format.
struct TreeSpec {
    id: String,
    hypothesis: String,
    sentences: Vec<String>,
    proof: String,
    step_types: Vec<&'static str>,
}

impl TreeSpec {
    fn to_json(&self, task: &str) -> serde_json::Value {
        let sentences: serde_json::Map<String, serde_json::Value> = self
            .sentences
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("s{}", i + 1), json!(s)))
            .collect();
        json!({
            "id": self.id,
            "hypothesis": self.hypothesis,
            "sentences": sentences,
            "proof": self.proof,
            "task": task,
            "step_types": self.step_types,
        })
    }
}

/// Draws one tree: a single step, a substitution feeding an if-then step,
/// or two facts joined by conjunction after a substitution.
fn tree(rng: &mut Rng, id: String) -> TreeSpec {
    match rng.below(3) {
        0 => {
            let t = Template::ALL[rng.below(3)];
            let (p1, p2, c) = t.instance(rng, SCIENCE);
            TreeSpec {
                id,
                hypothesis: c,
                sentences: vec![p1, p2],
                proof: "s1 & s2 -> hypothesis".into(),
                step_types: vec![t.name()],
            }
        }
        1 => {
            let e = entities(rng, SCIENCE, 4);
            let (k, v) = (pick(rng, KINDS), pick(rng, IF_VERBS));
            let b = pick(rng, THEN_VERBS);
            let int1 = format!("{} {v} {}", e[0], e[2]);
            let hyp = format!("{} {b} {}", e[0], e[3]);
            TreeSpec {
                id,
                hypothesis: hyp,
                sentences: vec![
                    format!("{} is a {k} of {}", e[0], e[1]),
                    format!("{} {v} {}", e[1], e[2]),
                    format!("if {} {v} {} then {} {b} {}", e[0], e[2], e[0], e[3]),
                ],
                proof: format!("s1 & s2 -> int1: {int1}; s3 & int1 -> hypothesis"),
                step_types: vec!["substitution", "if-then"],
            }
        }
        _ => {
            let e = entities(rng, SCIENCE, 4);
            let (k, r) = (pick(rng, KINDS), pick(rng, RELATIONS));
            let int1 = format!("{} is a {r} of {}", e[0], e[2]);
            let hyp = format!("{} and {} are {r}s of {}", e[0], e[3], e[2]);
            TreeSpec {
                id,
                hypothesis: hyp,
                sentences: vec![
                    format!("{} is a {k} of {}", e[0], e[1]),
                    format!("{} is a {r} of {}", e[1], e[2]),
                    format!("{} is a {r} of {}", e[3], e[2]),
                ],
                proof: format!("s1 & s2 -> int1: {int1}; int1 & s3 -> hypothesis"),
                step_types: vec!["substitution", "conjunction"],
            }
        }
    }
}

/// One tree with a three-premise step, to exercise binarization.
fn three_premise_tree(id: String) -> TreeSpec {
    TreeSpec {
        id,
        hypothesis: "a wolf and a fox eat prey".into(),
        sentences: vec![
            "a wolf is a kind of a predator".into(),
            "a fox is a kind of a predator".into(),
            "a predator eats prey".into(),
        ],
        proof: "s1 & s2 & s3 -> hypothesis".into(),
        step_types: vec!["conjunction"],
    }
}

fn with_distractors(rng: &mut Rng, mut t: TreeSpec, n: usize) -> TreeSpec {
    // Distractors draw from entities the tree does not mention.
    let mut extra = Vec::new();
    while extra.len() < n {
        let e = entities(rng, SCIENCE, 2);
        if t.sentences.iter().any(|s| s.contains(e[0]) || s.contains(e[1])) {
            continue;
        }
        extra.push(format!("{} is near {}", e[0], e[1]));
    }
    t.sentences.extend(extra);
    t
}

fn main() {
    let out: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "fixtures".into());
    let tagger = RuleTagger::new();
    check_entities(&tagger, HISTORY);
    check_entities(&tagger, SCIENCE);
    let mut rng = Rng::new(SEED);

    let corpus = pretrain_corpus(&mut rng);
    write(&out, "pretrain_raw.jsonl", &jsonl(&corpus));

    let fig2 = RawTriple {
        id: Some("fig2".into()),
        p1: "primitive society is a stage of social development".into(),
        p2: "feudal society is a stage of social development".into(),
        c: "primitive society and feudal society are different stages of social development".into(),
        kind: Some("conjunction".into()),
    };
    write(&out, "fig2.jsonl", &jsonl(&[fig2]));

    let mut splits = Vec::new();
    for (name, n) in [("train", 40usize), ("dev", 8), ("test", 12)] {
        let mut trees: Vec<serde_json::Value> = (0..n)
            .map(|i| tree(&mut rng, format!("{name}-{i:03}")).to_json("task1"))
            .collect();
        trees.push(three_premise_tree(format!("{name}-{n:03}")).to_json("task1"));
        let base = tree(&mut rng, format!("{name}-{:03}", n + 1));
        let t2 = with_distractors(&mut rng, base, 15);
        trees.push(t2.to_json("task2"));
        write(&out, &format!("treebank/{name}.jsonl"), &jsonl(&trees));
        splits.push((name, trees.len()));
    }

    let manifest = json!({
        "seed": SEED,
        "pretrain_raw": {"count": corpus.len(), "per_template": 20, "templates": ["substitution", "conjunction", "if-then"]},
        "fig2": {"count": 1},
        "treebank": splits.iter().map(|(k, v)| (k.to_string(), json!(v))).collect::<serde_json::Map<_, _>>(),
    });
    write(&out, "manifest.json", &(serde_json::to_string_pretty(&manifest).unwrap() + "\n"));
}
