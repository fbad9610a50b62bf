//! Acceptance gate: one PASS/FAIL line per criterion, written straight to
//! stdout so it shows without `--nocapture`. Criteria that are not met at
//! desk scale are reported, not asserted; the hard guarantees behind every
//! other line are also enforced by the unit and integration tests.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lmpm_core::abstraction::{abstract_triple, build_dataset, parse_raw, BuildOptions, RuleTagger, SuffixMatcher};
use lmpm_core::autodiff::{Rng, Tensor};
use lmpm_core::builder::{Generator, ModelGenerator};
use lmpm_core::checkpoint;
use lmpm_core::memory::{select_gumbel, MemoryConfig, PatternMemory, Selection, SelectionMode};
use lmpm_core::model::{Example, Lmpm, ModelConfig, Seq2Seq, BACKBONE_STREAM};
use lmpm_core::params::ParamGroup;
use lmpm_core::trainer::{finetune, pretrain, train_seq2seq, TrainConfig};
use lmpm_core::treebank::{extract_pairs, parse_treebank, Strictness};
use lmpm_core::vocab::{encode_pair, placeholder_index, tokenize, Vocabulary, BOS};

#[path = "../../core/tests/common/grad_checks.rs"]
mod grad_checks;

const PRETRAIN_EPOCHS: &str = "300";
const SLOTS: &str = "3";
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
const ABLATION_PRETRAIN: &str = "60";
const ABLATION_FINETUNE: &str = "40";

type Outcome = Result<(bool, String), String>;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fx(name: &str) -> String {
    fixtures().join(name).to_str().unwrap().to_string()
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn lmpm<S: AsRef<str>>(args: &[S]) -> Result<String, String> {
    let args: Vec<&str> = args.iter().map(AsRef::as_ref).collect();
    let out = Command::new(env!("CARGO_BIN_EXE_lmpm")).args(&args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("lmpm {}: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read(p: &Path) -> Result<String, String> {
    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn json(p: &Path) -> Result<serde_json::Value, String> {
    serde_json::from_str(&read(p)?).map_err(|e| e.to_string())
}

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn gate(n: usize, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(msg)
    });
    let took = t.elapsed();
    let (mut pass, mut detail) = match res {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    if let Some(l) = limit {
        if took > l {
            pass = false;
            detail.push_str(&format!("; over the {}s budget", l.as_secs()));
        }
    }
    let verdict = if pass { "PASS" } else { "FAIL" };
    say(&format!("criterion {n}: {verdict} - {detail} ({:.1}s)", took.as_secs_f64()));
    pass
}

fn gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for (name, check) in grad_checks::ALL {
        grad_checks::take_worst();
        if catch_unwind(*check).is_err() {
            failed.push(*name);
        }
        worst = worst.max(grad_checks::take_worst());
    }
    let detail = format!(
        "{} checks x {} cases, worst relative error {worst:.2e} (tolerance {:.0e}); failed: {failed:?}",
        grad_checks::ALL.len(),
        grad_checks::CASES,
        grad_checks::TOL
    );
    Ok((failed.is_empty(), detail))
}

fn gumbel_frequencies(gamma: &[f64], seed: u64) -> Vec<f64> {
    let g = Tensor::vector(gamma.to_vec()).unwrap();
    let mut rng = Rng::new(seed);
    let mut counts = vec![0usize; gamma.len()];
    for _ in 0..100_000 {
        let a = select_gumbel(&g, 1.0, &mut rng).unwrap().alpha;
        let k = (0..gamma.len()).fold(0, |b, i| if a.data()[i] > a.data()[b] { i } else { b });
        counts[k] += 1;
    }
    counts.iter().map(|&c| c as f64 / 1e5).collect()
}

fn gumbel_law() -> Outcome {
    let mut peaked = vec![0.0; 7];
    peaked[0] = 5.0;
    let want = 5f64.exp() / (5f64.exp() + 6.0);
    let f = gumbel_frequencies(&peaked, 1);
    let u = gumbel_frequencies(&[0.0; 7], 2);
    let dev = u.iter().map(|p| (p - 1.0 / 7.0).abs()).fold(0.0, f64::max);
    let pass = (f[0] - want).abs() <= 0.005 && dev <= 0.01;
    Ok((pass, format!("peaked slot 1 at {:.4} (want {want:.4} +/- 0.005); uniform max deviation {dev:.4}", f[0])))
}

fn bits(g: &ParamGroup) -> Vec<u64> {
    g.iter().flat_map(|(_, t)| t.data().iter().map(|x| x.to_bits())).collect()
}

fn identities() -> Outcome {
    let text = read(&fixtures().join("pretrain_raw.jsonl"))?;
    let raw = parse_raw(&text).map_err(|e| e.to_string())?;
    let (recs, _) = build_dataset(&raw, &BuildOptions::default(), &RuleTagger::new(), &SuffixMatcher).map_err(|e| e.to_string())?;
    let toks: Vec<_> = recs.iter().map(|r| r.tokens()).collect();
    let vocab = Vocabulary::build(toks.iter().flat_map(|t| t.iter().cloned()), 1).map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_len: 32,
        vocab_size: vocab.len(),
        d_m: 12,
        slots: 3,
        address_hidden: 0,
    };

    // zero injection
    let model = Lmpm::new(cfg.clone(), 1.0, 2).map_err(|e| e.to_string())?;
    let input = encode_pair(&toks[0][0], &toks[0][1], &vocab).map_err(|e| e.to_string())?;
    let mut prefix = vec![BOS];
    prefix.extend(vocab.encode(&toks[0][2]));
    let plain = model.decode_logits(&input, None, &prefix).map_err(|e| e.to_string())?;
    let zero = model
        .decode_logits(&input, Some(&Tensor::zeros(&[cfg.d_m])), &prefix)
        .map_err(|e| e.to_string())?;
    let zero_ok = plain.data().iter().zip(zero.data()).all(|(a, b)| a.to_bits() == b.to_bits());

    // one-hot lookup
    let mcfg = MemoryConfig {
        slots: 5,
        d_m: 6,
        d_enc: 8,
        d_model: 8,
        address_hidden: 0,
        temperature: 1.0,
    };
    let mem = PatternMemory::new(mcfg, &mut Rng::new(4)).map_err(|e| e.to_string())?;
    let lookup_ok = (0..5).all(|k| {
        let mut alpha = vec![0.0; 5];
        alpha[k] = 1.0;
        let sel = Selection {
            gamma: Tensor::zeros(&[5]),
            alpha: Tensor::vector(alpha).unwrap(),
            mode: SelectionMode::GumbelHard,
        };
        let f = mem.lookup(&sel).unwrap();
        f.data().iter().zip(mem.slots().row(k)).all(|(a, b)| a.to_bits() == b.to_bits())
    });

    // memory-free training against the plain backbone
    let ex: Vec<Example> = toks
        .iter()
        .step_by(5)
        .map(|t| Example::new(&t[0], &t[1], &t[2], &vocab))
        .collect::<lmpm_core::Result<_>>()
        .map_err(|e| e.to_string())?;
    let mut ablation_ok = true;
    for seed in [0, 9] {
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed,
            no_memory: true,
            ..TrainConfig::default()
        };
        let mut lmpm = Lmpm::new(cfg.clone(), 1.0, seed).map_err(|e| e.to_string())?;
        let a = pretrain(&mut lmpm, &ex, &tc).map_err(|e| e.to_string())?;
        let a2 = finetune(&mut lmpm, &ex, &tc).map_err(|e| e.to_string())?;
        let mut plain = Seq2Seq::new(cfg.clone(), &mut Rng::stream(seed, BACKBONE_STREAM)).map_err(|e| e.to_string())?;
        let b = train_seq2seq(&mut plain, &ex, &tc).map_err(|e| e.to_string())?;
        let b2 = train_seq2seq(&mut plain, &ex, &tc).map_err(|e| e.to_string())?;
        let lm = |c: &lmpm_core::trainer::LossCurve| c.rows.iter().map(|r| r.lm.to_bits()).collect::<Vec<_>>();
        ablation_ok &= bits(lmpm.backbone().params()) == bits(plain.params()) && lm(&a) == lm(&b) && lm(&a2) == lm(&b2);
    }
    Ok((
        zero_ok && lookup_ok && ablation_ok,
        format!("zero injection bitwise {zero_ok}; one-hot lookup exact {lookup_ok}; no_memory equals plain training {ablation_ok}"),
    ))
}

struct Overfit {
    dir: tempfile::TempDir,
    checkpoint: PathBuf,
}

fn exact_match(gen: &dyn Generator, items: &[(String, String, String)]) -> Result<f64, String> {
    let mut hits = 0;
    for (p1, p2, c) in items {
        let out = gen.conclude(p1, p2).map_err(|e| e.to_string())?;
        if tokenize(&out) == tokenize(c) {
            hits += 1;
        }
    }
    Ok(hits as f64 / items.len().max(1) as f64)
}

fn overfit(state: &mut Option<Overfit>) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ck = dir.path().join("pretrain.ckpt");
    let loss = dir.path().join("loss.csv");
    let records = dir.path().join("records.jsonl");
    lmpm(&["abstract".into(), "--input".into(), fx("pretrain_raw.jsonl"), "--output".into(), s(&records)])?;
    lmpm(&[
        "pretrain".into(),
        "--corpus".into(),
        s(&records),
        "--out".into(),
        s(&ck),
        "--epochs".into(),
        PRETRAIN_EPOCHS.into(),
        "--slots".into(),
        SLOTS.into(),
        "--loss-csv".into(),
        s(&loss),
    ])?;
    let rows: Vec<Vec<f64>> = read(&loss)?
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let epochs: usize = PRETRAIN_EPOCHS.parse().unwrap();
    let per_epoch = rows.len() / epochs;
    let tail = &rows[rows.len() - per_epoch..];
    let mean = |col: usize, rs: &[Vec<f64>]| rs.iter().map(|r| r[col]).sum::<f64>() / rs.len() as f64;
    let (first_total, first_lm) = (rows[0][3], rows[0][1]);
    let (last_total, last_lm) = (mean(3, tail), mean(1, tail));
    let ratio = last_total / first_total;

    let ckpt = checkpoint::load(&ck).map_err(|e| e.to_string())?;
    let gen = ModelGenerator::new(&ckpt.model, &ckpt.vocab).map_err(|e| e.to_string())?;
    let recs = lmpm_core::abstraction::parse_records(&read(&records)?).map_err(|e| e.to_string())?;
    let items: Vec<_> = recs.iter().map(|r| (r.p1.clone(), r.p2.clone(), r.c.clone())).collect();
    let em = exact_match(&gen, &items)?;
    *state = Some(Overfit { dir, checkpoint: ck });
    Ok((
        ratio < 0.1 && em >= 0.95,
        format!(
            "total loss {first_total:.3} -> {last_total:.3} (ratio {ratio:.3}, need < 0.1; LM term alone {first_lm:.3} -> {last_lm:.4}, ratio {:.4}); training exact match {:.1}% (need >= 95%)",
            last_lm / first_lm,
            100.0 * em
        ),
    ))
}

fn separation(state: &Option<Overfit>) -> Outcome {
    let st = state.as_ref().ok_or("criterion 4 produced no checkpoint")?;
    let d = st.dir.path();
    lmpm(&[
        "inspect-memory".into(),
        "--input".into(),
        s(&d.join("records.jsonl")),
        "--checkpoint".into(),
        s(&st.checkpoint),
        "--out".into(),
        s(&d.join("alpha.csv")),
        "--summary".into(),
        s(&d.join("summary.csv")),
        "--purity".into(),
        s(&d.join("purity.json")),
    ])?;
    let p = json(&d.join("purity.json"))?;
    let types = p["types"].as_object().ok_or("purity report has no types")?;
    let mut parts = Vec::new();
    let mut all_pure = true;
    for (k, v) in types {
        let purity = v["purity"].as_f64().unwrap_or(0.0);
        all_pure &= purity >= 0.8;
        parts.push(format!("{k} slot {} at {:.2}", v["majority_slot"], purity));
    }
    let distinct = p["distinct_majorities"].as_bool().unwrap_or(false);
    Ok((all_pure && distinct, format!("{}; distinct majority slots {distinct}", parts.join(", "))))
}

fn ablation_em(seed: u64, variant: &str, work: &Path) -> Result<f64, String> {
    let seed_s = seed.to_string();
    let d = work.join(format!("{variant}-{seed}"));
    std::fs::create_dir_all(&d).map_err(|e| e.to_string())?;
    let pre = d.join("pre.ckpt");
    let fine = d.join("fine.ckpt");
    let treebanks = ["train", "dev", "test"].map(|n| fx(&format!("treebank/{n}.jsonl")));
    let common = |v: &mut Vec<String>, epochs: &str| {
        v.extend(["--epochs", epochs, "--seed", &seed_s, "--slots", SLOTS].map(String::from));
    };
    let pretrain_with = |flags: &[&str], corpus: String| -> Result<(), String> {
        let mut v: Vec<String> = vec!["pretrain".into(), "--corpus".into(), corpus, "--out".into(), s(&pre)];
        common(&mut v, ABLATION_PRETRAIN);
        v.extend(flags.iter().map(|f| f.to_string()));
        v.push("--vocab-extra".into());
        v.extend(treebanks.iter().cloned());
        lmpm(&v).map(|_| ())
    };
    let finetune_with = |flags: &[&str], from: Option<&Path>| -> Result<(), String> {
        let mut v: Vec<String> = vec!["finetune".into(), "--treebank".into(), treebanks[0].clone(), "--out".into(), s(&fine)];
        common(&mut v, ABLATION_FINETUNE);
        v.extend(flags.iter().map(|f| f.to_string()));
        match from {
            Some(p) => v.extend(["--checkpoint".into(), s(p)]),
            None => {
                v.push("--vocab-extra".into());
                v.push(fx("pretrain_raw.jsonl"));
                v.extend(treebanks.iter().skip(1).cloned());
            }
        }
        lmpm(&v).map(|_| ())
    };
    match variant {
        "full" => {
            pretrain_with(&[], fx("pretrain_raw.jsonl"))?;
            finetune_with(&[], Some(&pre))?;
        }
        "no_abstraction" => {
            pretrain_with(&["--no-abstraction"], fx("pretrain_raw.jsonl"))?;
            finetune_with(&[], Some(&pre))?;
        }
        "no_lpp" => finetune_with(&[], None)?,
        "no_memory" => {
            pretrain_with(&["--no-memory"], fx("pretrain_raw.jsonl"))?;
            finetune_with(&["--no-memory"], Some(&pre))?;
        }
        _ => unreachable!(),
    }
    let ck = checkpoint::load(&fine).map_err(|e| e.to_string())?;
    let mut gen = ModelGenerator::new(&ck.model, &ck.vocab).map_err(|e| e.to_string())?;
    if variant == "no_memory" {
        gen = gen.without_memory();
    }
    let test = parse_treebank(&read(Path::new(&treebanks[2]))?, Strictness::Gold).map_err(|e| e.to_string())?;
    let items: Vec<_> = test
        .iter()
        .flat_map(extract_pairs)
        .map(|p| (p.p1, p.p2, p.conclusion))
        .collect();
    exact_match(&gen, &items)
}

fn ablations() -> Outcome {
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let variants = ["full", "no_abstraction", "no_lpp", "no_memory"];
    let mut mean = [0.0; 4];
    for seed in ABLATION_SEEDS {
        for (i, v) in variants.iter().enumerate() {
            mean[i] += ablation_em(seed, v, work.path())? / ABLATION_SEEDS.len() as f64;
        }
    }
    let [full, no_abs, no_lpp, no_mem] = mean;
    let pass = full >= no_abs && no_abs >= no_lpp && full >= no_mem;
    let detail = variants
        .iter()
        .zip(mean)
        .map(|(v, m)| format!("{v} {:.1}%", 100.0 * m))
        .collect::<Vec<_>>()
        .join(", ");
    let spread = mean.iter().cloned().fold(f64::MIN, f64::max) - mean.iter().cloned().fold(f64::MAX, f64::min);
    let note = if spread < 1e-12 { "; every variant ties, so the ordering holds only trivially" } else { "" };
    Ok((pass, format!("held-out exact match over {} seeds: {detail}{note}", ABLATION_SEEDS.len())))
}

fn evaluation_oracle() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut self_ok = true;
    for split in ["train", "dev", "test"] {
        let g = fx(&format!("treebank/{split}.jsonl"));
        let out = lmpm(&["evaluate", "--pred", &g, "--gold", &g])?;
        self_ok &= out.lines().nth(1) == Some("100.00,100.00,100.00,100.00,100.00,100.00,100.00");
    }
    let report = dir.path().join("r.json");
    lmpm(&["evaluate", "--pred", &fx("eval/pred.jsonl"), "--gold", &fx("eval/gold.jsonl"), "--out", &s(&report)])?;
    let r = json(&report)?;
    let tree = |id: &str| r["trees"].as_array().unwrap().iter().find(|t| t["id"] == id).map(|t| t["report"].clone());
    let f = |v: Option<serde_json::Value>, k: &str| v.and_then(|t| t[k]["f1"].as_f64()).unwrap_or(f64::NAN);
    let round4 = |x: f64| (x * 1e4).round() / 1e4;
    let leaves = round4(f(tree("leaves"), "leaves"));
    let steps = round4(f(tree("steps"), "steps"));
    let gold = parse_treebank(&read(&fixtures().join("eval/gold.jsonl"))?, Strictness::Gold).map_err(|e| e.to_string())?;
    let pred = parse_treebank(&read(&fixtures().join("eval/pred.jsonl"))?, Strictness::Structure).map_err(|e| e.to_string())?;
    let (g, p) = (gold.iter().find(|t| t.id == "intermediates"), pred.iter().find(|t| t.id == "intermediates"));
    let tf1 = match (g.and_then(|t| t.text("int1")), p.and_then(|t| t.text("int1"))) {
        (Some(a), Some(b)) => round4(lmpm_core::evaluator::token_f1(b, a)),
        _ => f64::NAN,
    };
    let inter = f(tree("intermediates"), "intermediates");
    let pass = self_ok && leaves == 0.6667 && steps == 0.6667 && tf1 == 0.6667 && inter == 0.5;
    Ok((
        pass,
        format!("gold vs gold all 100 {self_ok}; leaves F1 {leaves:.4}, steps F1 {steps:.4}, intermediate token-F1 {tf1:.4} (below 0.7, intermediates F1 {inter:.2})"),
    ))
}

fn sentence(rng: &mut Rng) -> String {
    const HEADS: &[&str] = &["a", "the", "primitive", "feudal", "ancient", "the large", "some modern", ""];
    const NOUNS: &[&str] = &["society", "kingdom", "village", "animal", "plant", "wolf", "water", "market", "river", "energy"];
    const LINKS: &[&str] = &["is a kind of", "needs", "has", "produces", "is a stage of", "and", "uses", "lives in"];
    let phrase = |rng: &mut Rng| {
        let h = HEADS[rng.below(HEADS.len())];
        let n = NOUNS[rng.below(NOUNS.len())];
        if h.is_empty() { n.to_string() } else { format!("{h} {n}") }
    };
    let mut out = phrase(rng);
    for _ in 0..1 + rng.below(3) {
        out = format!("{out} {} {}", LINKS[rng.below(LINKS.len())], phrase(rng));
    }
    out
}

fn data_pipeline() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("fig2.jsonl");
    lmpm(&["abstract", "--input", &fx("fig2.jsonl"), "--output", &s(&out), "--stats", &s(&dir.path().join("st.json"))])?;
    let r: serde_json::Value = serde_json::from_str(read(&out)?.lines().next().unwrap_or("")).map_err(|e| e.to_string())?;
    let fig2 = r["p1"] == "<E1> is a stage of <E2>"
        && r["c"] == "<E1> and <E3> are different stages of <E2>"
        && r["entity_map"]["primitive society"] == "E1";

    let mut rng = Rng::new(7);
    let sents: Vec<String> = (0..1000).map(|_| sentence(&mut rng)).collect();
    let (tagger, matcher) = (RuleTagger::new(), SuffixMatcher);
    let mut props_ok = true;
    for i in 0..1000 {
        let t = [&sents[i], &sents[(i + 1) % 1000], &sents[(i + 2) % 1000]].map(|x| tokenize(x));
        let a = abstract_triple(&t[0], &t[1], &t[2], &tagger, &matcher).map_err(|e| e.to_string())?;
        let restored = a.restore().map_err(|e| e.to_string())?;
        let b = abstract_triple(&a.p1, &a.p2, &a.c, &tagger, &matcher).map_err(|e| e.to_string())?;
        let mut seen = Vec::new();
        for k in a.p1.iter().chain(&a.p2).chain(&a.c).filter_map(|w| placeholder_index(w)) {
            if !seen.contains(&k) {
                seen.push(k);
            }
        }
        props_ok &= restored == t
            && (&b.p1, &b.p2, &b.c) == (&a.p1, &a.p2, &a.c)
            && b.entity_map.is_empty()
            && seen == (1..=seen.len()).collect::<Vec<_>>();
    }

    let frac = |name: &str, seed: &str| -> Result<Vec<u8>, String> {
        let p = dir.path().join(name);
        lmpm(&["abstract", "--input", &fx("pretrain_raw.jsonl"), "--output", &s(&p), "--fraction", "0.3", "--seed", seed, "--stats", &s(&dir.path().join("st.json"))])?;
        std::fs::read(&p).map_err(|e| e.to_string())
    };
    let (a, b, c) = (frac("a", "3")?, frac("b", "3")?, frac("c", "4")?);
    let frac_ok = a == b && a != c;
    Ok((
        fig2 && props_ok && frac_ok,
        format!("worked example {fig2}; idempotence, reversibility and numbering on 1000 sentences {props_ok}; seeded fraction {frac_ok}"),
    ))
}

fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let d = |n: &str| s(&dir.join(n));
    lmpm(&["abstract", "--input", &fx("pretrain_raw.jsonl"), "--output", &d("records.jsonl"), "--stats", &d("stats.json")])?;
    lmpm(&["pretrain", "--corpus", &d("records.jsonl"), "--out", &d("pre.ckpt"), "--epochs", "3", "--seed", "5", "--loss-csv", &d("pre.csv"), "--vocab-extra", &fx("treebank/train.jsonl"), &fx("treebank/test.jsonl")])?;
    lmpm(&["finetune", "--treebank", &fx("treebank/train.jsonl"), "--checkpoint", &d("pre.ckpt"), "--out", &d("fine.ckpt"), "--epochs", "3", "--seed", "5", "--loss-csv", &d("fine.csv")])?;
    for mode in ["oracle", "heuristic"] {
        lmpm(&["generate", "--treebank", &fx("treebank/test.jsonl"), "--checkpoint", &d("fine.ckpt"), "--mode", mode, "--out", &d(&format!("{mode}.jsonl"))])?;
        lmpm(&["evaluate", "--pred", &d(&format!("{mode}.jsonl")), "--gold", &fx("treebank/test.jsonl"), "--out", &d(&format!("{mode}.json")), "--csv", &d(&format!("{mode}.csv"))])?;
    }
    lmpm(&["inspect-memory", "--input", &d("records.jsonl"), "--checkpoint", &d("fine.ckpt"), "--out", &d("alpha.csv"), "--summary", &d("summary.csv")])?;
    let mut files: Vec<_> = std::fs::read_dir(dir).map_err(|e| e.to_string())?.map(|e| e.unwrap().path()).collect();
    files.sort();
    files
        .into_iter()
        .map(|p| Ok((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(|e| e.to_string())?)))
        .collect()
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let (x, y) = (pipeline(a.path())?, pipeline(b.path())?);
    let differ: Vec<&str> = x.iter().zip(&y).filter(|(p, q)| p != q).map(|(p, _)| p.0.as_str()).collect();
    let pass = x.len() == y.len() && differ.is_empty();
    Ok((pass, format!("{} artifacts compared byte for byte; differing: {differ:?}", x.len())))
}

#[test]
fn acceptance() {
    let mut passed = Vec::new();
    let secs = Duration::from_secs;
    passed.push(gate(1, Some(secs(60)), gradients));
    passed.push(gate(2, Some(secs(30)), gumbel_law));
    passed.push(gate(3, None, identities));
    let mut state = None;
    let t4 = Instant::now();
    passed.push(gate(4, Some(secs(300)), || overfit(&mut state)));
    let budget = secs(300).saturating_sub(t4.elapsed());
    passed.push(gate(5, Some(budget), || separation(&state)));
    passed.push(gate(6, None, ablations));
    passed.push(gate(7, Some(secs(10)), evaluation_oracle));
    passed.push(gate(8, Some(secs(30)), data_pipeline));
    passed.push(gate(9, None, determinism));
    let n = passed.iter().filter(|&&p| p).count();
    say(&format!("acceptance: {n} of {} criteria pass", passed.len()));
}
