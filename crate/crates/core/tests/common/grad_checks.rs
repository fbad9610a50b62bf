//! Gradient checks shared by the per-op tests and the acceptance run. Each
//! check panics past tolerance and records its worst error.

#![allow(dead_code)]

use lmpm_core::autodiff::{Rng, Tape, Tensor, Var};
use lmpm_core::gradcheck::{central_diff, max_rel_err, STEP};
use lmpm_core::memory::{gumbel_weights, MemoryConfig, PatternMemory};
use lmpm_core::model::{BowHead, Example, Lmpm, ModelConfig, SelectPlan};
use lmpm_core::vocab::{placeholder, Vocabulary, NUM_RESERVED};
use lmpm_core::Result;
use std::cell::Cell;

pub const CASES: u64 = 20;
pub const TOL: f64 = 1e-3;
const FLOOR: f64 = 1e-6;

thread_local! {
    static WORST: Cell<f64> = const { Cell::new(0.0) };
}

fn record(err: f64) {
    WORST.with(|w| w.set(w.get().max(err)));
}

/// Worst relative error seen on this thread since the last call.
pub fn take_worst() -> f64 {
    WORST.with(|w| w.replace(0.0))
}

/// Builds the op on fresh leaves and reduces it to a scalar through a fixed
/// random weighting, so every output entry contributes a distinct amount.
fn check<S, F>(name: &str, shapes: S, build: F)
where
    S: Fn(&mut Rng) -> Vec<Vec<usize>>,
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut worst: f64 = 0.0;
    for case in 0..CASES {
        let mut rng = Rng::stream(case, 77);
        let shapes = shapes(&mut rng);
        let inputs: Vec<Tensor> = shapes
            .iter()
            .map(|s| {
                let mut t = Tensor::randn(s, 1.0, &mut rng);
                // keep relu arguments off the kink
                for x in t.data_mut() {
                    if x.abs() < 0.01 {
                        *x += 0.05;
                    }
                }
                t
            })
            .collect();
        let out_len = {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
            let y = build(&mut tape, &vars).unwrap();
            tape.value(y).numel()
        };
        let weights: Vec<f64> = (0..out_len).map(|_| rng.normal()).collect();

        let forward = |tape: &mut Tape, ins: &[Tensor], track: bool| -> (Vec<Var>, Var) {
            let vars: Vec<Var> = ins
                .iter()
                .map(|t| {
                    let t = if track { t.clone().with_requires_grad() } else { t.clone() };
                    tape.leaf(t)
                })
                .collect();
            let y = build(tape, &vars).unwrap();
            let shape = tape.shape(y).to_vec();
            let w = tape.leaf(Tensor::new(shape, weights.clone()).unwrap());
            let p = tape.mul(y, w).unwrap();
            (vars, tape.sum(p))
        };

        let mut tape = Tape::new();
        let (vars, out) = forward(&mut tape, &inputs, true);
        let grads = tape.backward(out).unwrap();
        let mut analytic = Vec::new();
        for v in &vars {
            match grads.wrt(*v) {
                Some(g) => analytic.extend_from_slice(g),
                None => analytic.extend(std::iter::repeat(0.0).take(tape.value(*v).numel())),
            }
        }

        let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
        let numeric = central_diff(
            |x| {
                let mut off = 0;
                let ins: Vec<Tensor> = inputs
                    .iter()
                    .map(|t| {
                        let n = t.numel();
                        let r = Tensor::new(t.shape().to_vec(), x[off..off + n].to_vec()).unwrap();
                        off += n;
                        r
                    })
                    .collect();
                let mut tape = Tape::new();
                let (_, out) = forward(&mut tape, &ins, false);
                tape.value(out).data()[0]
            },
            &flat,
            STEP,
        );
        let err = max_rel_err(&analytic, &numeric, FLOOR);
        assert!(err < TOL, "{name} case {case}: relative error {err:.3e}");
        worst = worst.max(err);
    }
    record(worst);
    eprintln!("{name}: worst relative error {worst:.2e} over {CASES} cases");
}

fn dim(rng: &mut Rng) -> usize {
    1 + rng.below(4)
}

pub fn matmul() {
    check(
        "matmul",
        |r| {
            let (m, k, n) = (dim(r), dim(r), dim(r));
            vec![vec![m, k], vec![k, n]]
        },
        |t, v| t.matmul(v[0], v[1]),
    );
}

pub fn transpose() {
    check("transpose", |r| vec![vec![dim(r), dim(r)]], |t, v| t.transpose(v[0]));
}

pub fn add() {
    check(
        "add",
        |r| {
            let s = vec![dim(r), dim(r)];
            vec![s.clone(), s]
        },
        |t, v| t.add(v[0], v[1]),
    );
}

pub fn add_row() {
    check(
        "add_row",
        |r| {
            let (m, n) = (dim(r), dim(r));
            vec![vec![m, n], vec![n]]
        },
        |t, v| t.add_row(v[0], v[1]),
    );
}

pub fn shift() {
    check(
        "shift",
        |r| vec![vec![dim(r), dim(r)]],
        |t, v| {
            let n = t.value(v[0]).numel();
            let c: Vec<f64> = (0..n).map(|i| i as f64 * 0.3 - 1.0).collect();
            t.shift(v[0], &c)
        },
    );
}

pub fn scale() {
    check("scale", |r| vec![vec![dim(r), dim(r)]], |t, v| Ok(t.scale(v[0], -1.7)));
}

pub fn mul() {
    check(
        "mul",
        |r| {
            let s = vec![dim(r), dim(r)];
            vec![s.clone(), s]
        },
        |t, v| t.mul(v[0], v[1]),
    );
}

pub fn gelu() {
    check("gelu", |r| vec![vec![dim(r), dim(r)]], |t, v| Ok(t.gelu(v[0])));
}

pub fn relu() {
    check("relu", |r| vec![vec![dim(r), dim(r)]], |t, v| Ok(t.relu(v[0])));
}

pub fn layer_norm() {
    check(
        "layer_norm",
        |r| {
            let (m, n) = (dim(r), 2 + r.below(5));
            vec![vec![m, n], vec![n], vec![n]]
        },
        |t, v| t.layer_norm(v[0], v[1], v[2]),
    );
}

pub fn softmax() {
    check("softmax", |r| vec![vec![dim(r), 1 + dim(r)]], |t, v| Ok(t.softmax(v[0])));
}

pub fn softmax_vector() {
    check("softmax_vector", |r| vec![vec![1 + dim(r)]], |t, v| Ok(t.softmax(v[0])));
}

pub fn log_softmax() {
    check("log_softmax", |r| vec![vec![dim(r), 1 + dim(r)]], |t, v| Ok(t.log_softmax(v[0])));
}

pub fn embedding() {
    check(
        "embedding",
        |r| vec![vec![5, dim(r)]],
        |t, v| t.embedding(v[0], &[3, 0, 3, 4]),
    );
}

pub fn concat_rows() {
    check(
        "concat_rows",
        |r| {
            let n = dim(r);
            vec![vec![dim(r), n], vec![dim(r), n]]
        },
        |t, v| t.concat_rows(&[v[0], v[1]]),
    );
}

pub fn concat_cols() {
    check(
        "concat_cols",
        |r| {
            let m = dim(r);
            vec![vec![m, dim(r)], vec![m, dim(r)], vec![m, dim(r)]]
        },
        |t, v| t.concat_cols(&[v[0], v[1], v[2]]),
    );
}

pub fn concat_vectors() {
    check(
        "concat_vectors",
        |r| vec![vec![dim(r)], vec![dim(r)]],
        |t, v| t.concat_cols(&[v[0], v[1]]),
    );
}

pub fn slice_rows() {
    check(
        "slice_rows",
        |r| vec![vec![2 + dim(r), dim(r)]],
        |t, v| t.slice_rows(v[0], 1, 2),
    );
}

pub fn slice_cols() {
    check(
        "slice_cols",
        |r| vec![vec![dim(r), 3 + dim(r)]],
        |t, v| t.slice_cols(v[0], 1, 2),
    );
}

pub fn reshape() {
    check("reshape", |_| vec![vec![2, 6]], |t, v| t.reshape(v[0], &[3, 4]));
}

pub fn sum() {
    check("sum", |r| vec![vec![dim(r), dim(r)]], |t, v| Ok(t.sum(v[0])));
}

pub fn cross_entropy() {
    check(
        "cross_entropy",
        |_| vec![vec![3, 5]],
        |t, v| t.cross_entropy(v[0], &[4, 0, 4]),
    );
}

pub fn neg_pick() {
    check("neg_pick", |_| vec![vec![6]], |t, v| t.neg_pick(v[0], &[1, 5, 1, 2]));
}

pub fn address_head() {
    check(
        "address",
        |_| vec![vec![4], vec![4, 3], vec![3]],
        |t, v| {
            let row = t.reshape(v[0], &[1, 4])?;
            let w = t.matmul(row, v[1])?;
            let w = t.reshape(w, &[3])?;
            t.add(w, v[2])
        },
    );
    // Parameters bound through the memory itself.
    let mut rng = Rng::new(3);
    for case in 0..CASES {
        let cfg = MemoryConfig {
            slots: 3,
            d_m: 2,
            d_enc: 4,
            d_model: 5,
            address_hidden: if case % 2 == 1 { 3 } else { 0 },
            temperature: 1.0,
        };
        let mut mem = PatternMemory::new(cfg, &mut Rng::new(case)).unwrap();
        let h = Tensor::randn(&[4], 1.0, &mut rng);
        let w = Tensor::randn(&[3], 1.0, &mut rng);
        let loss = |mem: &PatternMemory| {
            let mut tape = Tape::new();
            let hv = tape.leaf(h.clone());
            let g = mem.address_var(&mut tape, hv).unwrap();
            let wv = tape.leaf(w.clone());
            let p = tape.mul(g, wv).unwrap();
            let s = tape.sum(p);
            (tape, s)
        };
        let (tape, s) = loss(&mem);
        let grads = tape.backward(s).unwrap();
        let bound = tape.params();
        for (key, var) in bound {
            let analytic = grads.wrt(var).unwrap().to_vec();
            let base = mem.params().tensor_at(key.index).unwrap().data().to_vec();
            let numeric = central_diff(
                |x| {
                    mem.params_mut().tensor_at_mut(key.index).unwrap().data_mut().copy_from_slice(x);
                    let (tape, s) = loss(&mem);
                    mem.params_mut().tensor_at_mut(key.index).unwrap().data_mut().copy_from_slice(&base);
                    tape.value(s).data()[0]
                },
                &base,
                STEP,
            );
            let err = max_rel_err(&analytic, &numeric, FLOOR);
            assert!(err < TOL, "address param {key:?} case {case}: {err:.3e}");
            record(err);
        }
    }
}

pub fn gumbel_relaxation() {
    let noise = [0.3, -0.8, 1.1, 0.05];
    check("gumbel_weights", |_| vec![vec![4]], |t, v| gumbel_weights(t, v[0], &noise, 0.7));
}

pub fn bow_head_wrt_inputs() {
    let head = BowHead::new(3, 2, 7, &mut Rng::new(41));
    check(
        "bow_loss",
        |_| vec![vec![3], vec![2]],
        |t, v| head.loss_var(t, v[0], v[1], &[6, 2, 2]),
    );
}

fn tiny_vocab() -> Vocabulary {
    let words = "is a kind of stage all are and the".split(' ');
    let corpus: Vec<Vec<String>> = vec![words.map(String::from).collect()];
    Vocabulary::build(corpus, 1).unwrap()
}

fn toks(s: &str) -> Vec<String> {
    lmpm_core::vocab::tokenize(s)
}

/// 50 sampled scalars across the backbone, the memory rows, w_z, proj and
/// the BOW head, for ℒ_LM + ℒ_BOW under a fixed Gumbel draw.
pub fn end_to_end_total_loss() {
    let vocab = tiny_vocab();
    let cfg = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 12,
        max_len: 24,
        vocab_size: vocab.len(),
        d_m: 6,
        slots: 3,
        address_hidden: 0,
    };
    assert!(vocab.len() > NUM_RESERVED);
    let ex = Example::new(
        &toks(&format!("{} is a kind of {}", placeholder(1), placeholder(2))),
        &toks(&format!("{} is a kind of {}", placeholder(2), placeholder(3))),
        &toks(&format!("{} is a kind of {}", placeholder(1), placeholder(3))),
        &vocab,
    )
    .unwrap();

    let mut worst: f64 = 0.0;
    for case in 0..CASES {
        let mut model = Lmpm::new(cfg.clone(), 1.0, 100 + case).unwrap();
        assert!(model.memory().proj().is_some());
        let mut rng = Rng::stream(case, 9);
        let plan = SelectPlan::Gumbel {
            temperature: 1.0,
            noise: (0..3).map(|_| rng.gumbel()).collect(),
        };
        let loss_of = |m: &Lmpm| -> f64 {
            let mut tape = Tape::new();
            let l = m.step_loss(&mut tape, &ex, &plan, true).unwrap();
            tape.value(l.total).data()[0]
        };
        let mut tape = Tape::new();
        let l = model.step_loss(&mut tape, &ex, &plan, true).unwrap();
        assert!(l.bow.is_some());
        let grads = tape.backward(l.total).unwrap();
        let bound = tape.params();

        // Sample (group, tensor, entry) triples; memory tensors are always
        // included so slot rows, w_z and proj are covered every case.
        let mut picks = Vec::new();
        for (key, _) in &bound {
            if key.group == lmpm_core::params::MEMORY_GROUP {
                picks.push((key.group, key.index));
            }
        }
        while picks.len() < 50 {
            let (key, _) = bound[rng.below(bound.len())];
            picks.push((key.group, key.index));
        }
        for &(group, index) in picks.iter().take(50) {
            let var = bound
                .iter()
                .find(|(k, _)| k.group == group && k.index == index)
                .unwrap()
                .1;
            let n = tape.value(var).numel();
            let j = rng.below(n);
            let analytic = grads.wrt(var).map(|g| g[j]).unwrap_or(0.0);
            let base = model.groups()[group as usize].tensor_at(index).unwrap().data()[j];
            let mut at = |x: f64| {
                model.groups_mut()[group as usize].tensor_at_mut(index).unwrap().data_mut()[j] = x;
                let v = loss_of(&model);
                model.groups_mut()[group as usize].tensor_at_mut(index).unwrap().data_mut()[j] = base;
                v
            };
            let numeric = (at(base + STEP) - at(base - STEP)) / (2.0 * STEP);
            let err = max_rel_err(&[analytic], &[numeric], FLOOR);
            assert!(err < TOL, "case {case} param ({group},{index})[{j}]: {analytic} vs {numeric}");
            worst = worst.max(err);
        }
    }
    record(worst);
    eprintln!("end-to-end: worst relative error {worst:.2e}");
}

/// Every check by name, in order.
pub const ALL: &[(&str, fn())] = &[
    ("matmul", matmul),
    ("transpose", transpose),
    ("add", add),
    ("add_row", add_row),
    ("shift", shift),
    ("scale", scale),
    ("mul", mul),
    ("gelu", gelu),
    ("relu", relu),
    ("layer_norm", layer_norm),
    ("softmax", softmax),
    ("softmax_vector", softmax_vector),
    ("log_softmax", log_softmax),
    ("embedding", embedding),
    ("concat_rows", concat_rows),
    ("concat_cols", concat_cols),
    ("concat_vectors", concat_vectors),
    ("slice_rows", slice_rows),
    ("slice_cols", slice_cols),
    ("reshape", reshape),
    ("sum", sum),
    ("cross_entropy", cross_entropy),
    ("neg_pick", neg_pick),
    ("address_head", address_head),
    ("gumbel_relaxation", gumbel_relaxation),
    ("bow_head_wrt_inputs", bow_head_wrt_inputs),
    ("end_to_end_total_loss", end_to_end_total_loss),
];
