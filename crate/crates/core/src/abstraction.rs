//! Entity abstraction: tag tokens, find entity spans, and replace them with
//! shared `<Ek>` placeholders across the premises and the conclusion.
//!
//! Spans follow four shapes: `noun`, `det noun`, `adj noun`, `det adj noun`.
//! Matching is longest-first and non-overlapping, scanning left to right.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{is_reserved, join, placeholder, placeholder_index, tokenize, MAX_PLACEHOLDERS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tag {
    Noun,
    Det,
    Adj,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedToken {
    pub text: String,
    pub tag: Tag,
}

pub trait Tagger {
    fn tag(&self, tokens: &[String]) -> Vec<TaggedToken>;
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "no", "many", "most",
    "several", "all", "both", "its", "their", "his", "her", "our", "my", "your",
];

/// Function words, verbs and relational nouns that must never start or
/// end an entity.
const CLOSED_OTHER: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "do", "does", "did", "can",
    "could", "will", "would", "may", "might", "must", "shall", "should", "of", "in", "on", "at", "to", "from",
    "by", "with", "for", "into", "onto", "through", "over", "under", "about", "as", "than", "and", "or", "but",
    "if", "then", "so", "because", "not", "also", "only", "very", "more", "less", "when", "while", "where",
    "which", "who", "what", "how", "there", "here", "it", "they", "them", "he", "she", "we", "you", "i", "one",
    "something", "someone", "thing", "things", "kind", "kinds", "type", "types", "part", "parts", "stage",
    "stages", "form", "forms", "example", "examples", "member", "members", "source", "sources", "way", "ways",
    "means", "used", "made", "called", "needs", "need", "contains", "contain", "produces", "produce",
    "requires", "require", "gets", "get", "loses", "lose", "becomes", "become", "lives", "live", "moves",
    "move", "eats", "eat", "causes", "cause", "helps", "help", "uses", "use", "makes", "make", "gives", "give",
    "takes", "take", "grows", "grow", "provides", "provide", "includes", "include", "belongs", "belong",
];

const NOUNS: &[&str] = &[
    "society", "development", "history", "civilization", "economy", "culture", "state", "kingdom", "empire",
    "nation", "city", "village", "trade", "agriculture", "industry", "labor", "class", "property", "law",
    "war", "religion", "tribe", "family", "land", "wealth", "money", "market", "tool", "craft", "farming",
    "slavery", "revolution", "era", "age", "period", "population", "government", "people", "army", "king",
    "animal", "plant", "food", "water", "energy", "sun", "light", "heat", "air", "soil", "rock", "mineral",
    "tree", "leaf", "root", "seed", "flower", "fruit", "cell", "organism", "body", "blood", "bone", "muscle",
    "oxygen", "carbon", "gas", "liquid", "solid", "ice", "steam", "metal", "iron", "copper", "wood", "glass",
    "magnet", "electricity", "circuit", "wire", "battery", "planet", "earth", "moon", "star", "orbit",
    "weather", "rain", "cloud", "wind", "storm", "ocean", "river", "lake", "mountain", "desert", "forest",
    "habitat", "environment", "predator", "prey", "bird", "fish", "insect", "mammal", "reptile", "frog",
    "dog", "cat", "deer", "wolf", "fox", "bear", "rabbit", "snake", "bee", "butterfly", "owl", "eagle", "shark",
    "whale", "salt", "sugar", "matter", "mass", "force", "gravity", "motion", "speed", "sound", "wave",
    "shadow", "mirror", "lens", "telescope", "thermometer", "temperature", "season", "summer", "winter",
    "nutrient", "offspring", "trait", "gene", "species", "photosynthesis", "fur", "feather", "shell",
    "stem", "sap", "nectar", "pollen", "egg", "nest", "den", "pond", "grass", "coal", "oil", "fuel",
    "heart", "lung", "brain", "stomach", "skin", "eye", "ear", "nose", "tooth", "student", "scientist",
    "sample", "object", "substance", "material", "mixture", "solution",
];

const ADJECTIVES: &[&str] = &[
    "primitive", "feudal", "social", "ancient", "modern", "early", "late", "new", "old", "big", "small",
    "large", "little", "great", "high", "low", "hot", "cold", "warm", "cool", "dry", "wet", "green", "red",
    "blue", "black", "white", "dark", "bright", "heavy", "light", "strong", "weak", "fast", "slow", "young",
    "wild", "domestic", "different", "same", "other", "natural", "human", "agricultural", "industrial",
    "capitalist", "socialist", "slave", "tribal", "urban", "rural", "solar", "renewable", "living",
    "nonliving", "green", "sharp", "thick", "thin", "soft", "hard", "long", "short", "deep", "shallow",
    "fresh", "salty", "sweet", "electric", "magnetic", "metallic", "liquid", "gaseous", "frozen", "melted",
];

const NOUN_SUFFIXES: &[&str] = &[
    "tion", "sion", "ment", "ness", "ity", "ety", "ism", "ance", "ence", "ship", "hood", "ology",
];

const ADJ_SUFFIXES: &[&str] = &["al", "ive", "ous", "ful", "ic", "able", "ible", "less"];

/// Closed-class lists, a lexicon, then suffix rules; unknown words are
/// OTHER. Entries added with [`RuleTagger::insert`] take precedence over the
/// built-in lexicon.
#[derive(Clone, Debug)]
pub struct RuleTagger {
    lexicon: HashMap<String, Tag>,
    user: HashMap<String, Tag>,
}

impl Default for RuleTagger {
    fn default() -> Self {
        let mut lexicon = HashMap::new();
        for w in NOUNS {
            lexicon.insert(w.to_string(), Tag::Noun);
        }
        // "light" and "liquid" are both; the adjective reading wins before a
        // noun and the noun reading is recovered by span shape anyway.
        for w in ADJECTIVES {
            lexicon.insert(w.to_string(), Tag::Adj);
        }
        for w in CLOSED_OTHER {
            lexicon.insert(w.to_string(), Tag::Other);
        }
        RuleTagger {
            lexicon,
            user: HashMap::new(),
        }
    }
}

impl RuleTagger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, tag: Tag) {
        self.user.insert(word.to_lowercase(), tag);
    }

    /// Reads `word<TAB>TAG` lines; blank lines and `#` comments are skipped.
    pub fn load_lexicon(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(word), Some(tag), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Line {
                    line: i + 1,
                    msg: "expected `word TAG`".into(),
                });
            };
            let tag = match tag {
                "NOUN" => Tag::Noun,
                "DET" => Tag::Det,
                "ADJ" => Tag::Adj,
                "OTHER" => Tag::Other,
                t => {
                    return Err(Error::Line {
                        line: i + 1,
                        msg: format!("unknown tag {t:?}"),
                    })
                }
            };
            self.insert(word, tag);
        }
        Ok(())
    }

    fn lookup(&self, w: &str) -> Option<Tag> {
        self.user.get(w).or_else(|| self.lexicon.get(w)).copied()
    }

    pub fn tag_word(&self, w: &str) -> Tag {
        if is_reserved(w) {
            return Tag::Other;
        }
        let w = w.to_lowercase();
        if DETERMINERS.contains(&w.as_str()) && !self.user.contains_key(&w) {
            return Tag::Det;
        }
        if let Some(t) = self.lookup(&w) {
            return t;
        }
        let stems = plural_stems(&w);
        for stem in &stems {
            if let Some(Tag::Noun) = self.lookup(stem) {
                return Tag::Noun;
            }
        }
        if NOUN_SUFFIXES.iter().any(|s| w.len() > s.len() + 2 && w.ends_with(s)) {
            return Tag::Noun;
        }
        for stem in &stems {
            if NOUN_SUFFIXES.iter().any(|s| stem.len() > s.len() + 2 && stem.ends_with(s)) {
                return Tag::Noun;
            }
        }
        if ADJ_SUFFIXES.iter().any(|s| w.len() > s.len() + 2 && w.ends_with(s)) {
            return Tag::Adj;
        }
        Tag::Other
    }
}

impl Tagger for RuleTagger {
    fn tag(&self, tokens: &[String]) -> Vec<TaggedToken> {
        tokens
            .iter()
            .map(|t| TaggedToken {
                text: t.clone(),
                tag: self.tag_word(t),
            })
            .collect()
    }
}

/// Singular candidates for a possibly plural `w`.
fn plural_stems(w: &str) -> Vec<String> {
    let mut v = Vec::new();
    if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") {
        v.push(w[..w.len() - 1].to_string());
    }
    if w.len() > 4 && w.ends_with("es") {
        v.push(w[..w.len() - 2].to_string());
    }
    if w.len() > 4 && w.ends_with("ies") {
        v.push(format!("{}y", &w[..w.len() - 3]));
    }
    v
}

/// Half-open token range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

pub fn extract_spans(tagged: &[TaggedToken]) -> Vec<Span> {
    let tag = |i: usize| tagged.get(i).map(|t| t.tag);
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tagged.len() {
        let len = match (tag(i), tag(i + 1), tag(i + 2)) {
            (Some(Tag::Det), Some(Tag::Adj), Some(Tag::Noun)) => 3,
            (Some(Tag::Det), Some(Tag::Noun), _) | (Some(Tag::Adj), Some(Tag::Noun), _) => 2,
            (Some(Tag::Noun), _, _) => 1,
            _ => 0,
        };
        if len == 0 {
            i += 1;
        } else {
            spans.push(Span { start: i, end: i + len });
            i += len;
        }
    }
    spans
}

/// Decides whether two entity phrases name the same entity.
pub trait FormMatcher {
    fn same_entity(&self, a: &[String], b: &[String]) -> bool;
}

/// Lowercase, drop leading determiners, then compare word by word allowing a
/// stripped "s" or "es" on either side.
#[derive(Clone, Copy, Debug, Default)]
pub struct SuffixMatcher;

impl SuffixMatcher {
    fn core(p: &[String]) -> Vec<String> {
        let words: Vec<String> = p.iter().map(|w| w.to_lowercase()).collect();
        let skip = words.iter().take_while(|w| DETERMINERS.contains(&w.as_str())).count();
        if skip == words.len() {
            words
        } else {
            words[skip..].to_vec()
        }
    }

    fn forms(w: &str) -> Vec<&str> {
        let mut v = vec![w];
        if w.len() > 1 && w.ends_with('s') {
            v.push(&w[..w.len() - 1]);
        }
        if w.len() > 2 && w.ends_with("es") {
            v.push(&w[..w.len() - 2]);
        }
        v
    }
}

impl FormMatcher for SuffixMatcher {
    fn same_entity(&self, a: &[String], b: &[String]) -> bool {
        let (a, b) = (Self::core(a), Self::core(b));
        a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| {
                let fy = Self::forms(y);
                Self::forms(x).iter().any(|f| fy.contains(f))
            })
    }
}

/// Exact string equality, for runs without the suffix rule.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactMatcher;

impl FormMatcher for ExactMatcher {
    fn same_entity(&self, a: &[String], b: &[String]) -> bool {
        a == b
    }
}

/// Premises and conclusion after abstraction. `surfaces` holds the original
/// phrase for every placeholder occurrence in reading order, so the source
/// tokens can be restored even when inflected forms share a placeholder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbstractTriple {
    pub p1: Vec<String>,
    pub p2: Vec<String>,
    pub c: Vec<String>,
    pub entity_map: BTreeMap<String, usize>,
    pub surfaces: [Vec<String>; 3],
    /// Placeholders in `c` that neither premise contains.
    pub conclusion_novel: Vec<usize>,
}

impl AbstractTriple {
    pub fn sentences(&self) -> [&[String]; 3] {
        [&self.p1, &self.p2, &self.c]
    }

    /// Substitutes the recorded surface phrases back in.
    pub fn restore(&self) -> Result<[Vec<String>; 3]> {
        let created: HashSet<usize> = self.entity_map.values().copied().collect();
        let mut out: [Vec<String>; 3] = Default::default();
        for (s, sentence) in self.sentences().iter().enumerate() {
            let mut surf = self.surfaces[s].iter();
            for tok in sentence.iter() {
                if placeholder_index(tok).is_some_and(|k| created.contains(&k)) {
                    let phrase = surf
                        .next()
                        .ok_or_else(|| Error::Integrity("fewer surfaces than placeholders".into()))?;
                    out[s].extend(phrase.split(' ').map(String::from));
                } else {
                    out[s].push(tok.clone());
                }
            }
            if surf.next().is_some() {
                return Err(Error::Integrity("more surfaces than placeholders".into()));
            }
        }
        Ok(out)
    }
}

/// Replaces entity spans in the three sentences with placeholders numbered
/// by first appearance.
pub fn abstract_triple(
    p1: &[String],
    p2: &[String],
    c: &[String],
    tagger: &dyn Tagger,
    matcher: &dyn FormMatcher,
) -> Result<AbstractTriple> {
    for (name, s) in [("p1", p1), ("p2", p2), ("c", c)] {
        if s.is_empty() {
            return Err(Error::Input(format!("{name} is empty")));
        }
    }
    // Sentences that already carry placeholders keep their numbering; new
    // entities continue after the highest one present.
    let mut next = [p1, p2, c]
        .iter()
        .flat_map(|s| s.iter())
        .filter_map(|t| placeholder_index(t))
        .max()
        .unwrap_or(0);
    let mut entities: Vec<(Vec<String>, usize)> = Vec::new();
    let mut entity_map = BTreeMap::new();
    let mut outs: [Vec<String>; 3] = Default::default();
    let mut surfaces: [Vec<String>; 3] = Default::default();
    for (s, sent) in [p1, p2, c].into_iter().enumerate() {
        let tagged = tagger.tag(sent);
        let spans = extract_spans(&tagged);
        let mut pos = 0;
        for span in spans {
            outs[s].extend_from_slice(&sent[pos..span.start]);
            let phrase = &sent[span.start..span.end];
            let k = match entities.iter().find(|(p, _)| matcher.same_entity(p, phrase)) {
                Some((_, k)) => *k,
                None => {
                    next += 1;
                    if next > MAX_PLACEHOLDERS {
                        return Err(Error::Capacity(format!(
                            "more than {MAX_PLACEHOLDERS} distinct entities in one triple"
                        )));
                    }
                    entities.push((phrase.to_vec(), next));
                    next
                }
            };
            entity_map.entry(join(phrase)).or_insert(k);
            outs[s].push(placeholder(k));
            surfaces[s].push(join(phrase));
            pos = span.end;
        }
        outs[s].extend_from_slice(&sent[pos..]);
    }
    let [p1, p2, c] = outs;
    let in_premises: HashSet<&String> = p1.iter().chain(&p2).collect();
    let mut conclusion_novel: Vec<usize> = c
        .iter()
        .filter(|t| !in_premises.contains(t))
        .filter_map(|t| placeholder_index(t))
        .collect();
    conclusion_novel.dedup();
    Ok(AbstractTriple {
        p1,
        p2,
        c,
        entity_map,
        surfaces,
        conclusion_novel,
    })
}

/// One raw input line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTriple {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub p1: String,
    pub p2: String,
    pub c: String,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

/// One output line: the abstract (or, without abstraction, normalized raw)
/// sentences plus `entity_map` of phrase → `Ek`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub p1: String,
    pub p2: String,
    pub c: String,
    pub entity_map: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surfaces: Option<BTreeMap<String, Vec<String>>>,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

impl AbstractRecord {
    pub fn tokens(&self) -> [Vec<String>; 3] {
        [tokenize(&self.p1), tokenize(&self.p2), tokenize(&self.c)]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    /// Mean of |p1| + |p2| + |c| in tokens.
    pub mean_len: f64,
    pub max_len: usize,
    pub conclusion_novel: usize,
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub fraction: f64,
    pub seed: u64,
    pub no_abstraction: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            fraction: 1.0,
            seed: 0,
            no_abstraction: false,
        }
    }
}

/// Parses JSON lines; blank lines are skipped, anything else malformed is
/// reported with its 1-based line number.
pub fn parse_raw(text: &str) -> Result<Vec<RawTriple>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: RawTriple = serde_json::from_str(line).map_err(|e| Error::Line {
            line: i + 1,
            msg: e.to_string(),
        })?;
        for (name, s) in [("p1", &r.p1), ("p2", &r.p2), ("c", &r.c)] {
            if tokenize(s).is_empty() {
                return Err(Error::Line {
                    line: i + 1,
                    msg: format!("field {name} is empty"),
                });
            }
        }
        out.push(r);
    }
    Ok(out)
}

pub fn parse_records(text: &str) -> Result<Vec<AbstractRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Line {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn build_dataset(
    raw: &[RawTriple],
    opts: &BuildOptions,
    tagger: &dyn Tagger,
    matcher: &dyn FormMatcher,
) -> Result<(Vec<AbstractRecord>, DatasetStats)> {
    let chosen = crate::trainer::select_fraction(raw.len(), opts.fraction, opts.seed)?;
    let mut out = Vec::with_capacity(chosen.len());
    let mut stats = DatasetStats::default();
    let mut total_len = 0;
    for i in chosen {
        let r = &raw[i];
        let (p1, p2, c) = (tokenize(&r.p1), tokenize(&r.p2), tokenize(&r.c));
        let rec = if opts.no_abstraction {
            AbstractRecord {
                id: r.id.clone(),
                p1: join(&p1),
                p2: join(&p2),
                c: join(&c),
                entity_map: BTreeMap::new(),
                surfaces: None,
                kind: r.kind.clone(),
            }
        } else {
            let a = abstract_triple(&p1, &p2, &c, tagger, matcher)?;
            stats.conclusion_novel += a.conclusion_novel.len();
            let surfaces = ["p1", "p2", "c"]
                .iter()
                .zip(a.surfaces.iter())
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect();
            AbstractRecord {
                id: r.id.clone(),
                p1: join(&a.p1),
                p2: join(&a.p2),
                c: join(&a.c),
                entity_map: a.entity_map.iter().map(|(p, k)| (p.clone(), format!("E{k}"))).collect(),
                surfaces: Some(surfaces),
                kind: r.kind.clone(),
            }
        };
        let len: usize = rec.tokens().iter().map(Vec::len).sum();
        total_len += len;
        stats.max_len = stats.max_len.max(len);
        out.push(rec);
    }
    stats.count = out.len();
    stats.mean_len = if out.is_empty() {
        0.0
    } else {
        total_len as f64 / out.len() as f64
    };
    Ok((out, stats))
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}
