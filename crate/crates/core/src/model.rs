//! Small pre-norm transformer encoder-decoder, the bag-of-words head, and
//! [`Lmpm`], which joins them with the pattern memory.
//!
//! Injection happens on the decoder's first input row: the `<s>` embedding
//! plus `f_z` replaces the plain `<s>` embedding before positions are added.
//! The output projection is tied to the token embedding table.

use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax, Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::memory::{gumbel_weights, select_softmax, MemoryConfig, PatternMemory, Selection};
use crate::params::{ParamGroup, ParamId, BACKBONE_GROUP, BOW_GROUP};
use crate::vocab::{encode_pair, EncodedInput, Vocabulary, BOS, EOS};

const MASKED: f64 = -1e30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub d_m: usize,
    /// Memory slots, `L`.
    pub slots: usize,
    pub address_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            d_ff: 128,
            max_len: 64,
            vocab_size: crate::vocab::NUM_RESERVED,
            d_m: 64,
            slots: 7,
            address_hidden: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
            ("d_m", self.d_m),
            ("slots", self.slots),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < crate::vocab::NUM_RESERVED {
            return Err(Error::Config("model.vocab_size is smaller than the reserved tokens".into()));
        }
        Ok(())
    }

    pub fn memory_config(&self, temperature: f64) -> MemoryConfig {
        MemoryConfig {
            slots: self.slots,
            d_m: self.d_m,
            d_enc: self.d_model,
            d_model: self.d_model,
            address_hidden: self.address_hidden,
            temperature,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct Attention {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct FeedForward {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct EncoderLayer {
    ln1: Norm,
    attn: Attention,
    ln2: Norm,
    ffn: FeedForward,
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderLayer {
    ln1: Norm,
    self_attn: Attention,
    ln2: Norm,
    cross_attn: Attention,
    ln3: Norm,
    ffn: FeedForward,
}

/// Tape handles for an encoded input.
#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    pub hidden: Var,
    pub h_z: Var,
}

/// Encoder states as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub hidden: Tensor,
    pub h_z: Tensor,
}

struct Builder<'a> {
    params: &'a mut ParamGroup,
    rng: &'a mut Rng,
}

impl Builder<'_> {
    fn matrix(&mut self, name: String, rows: usize, cols: usize, std: f64) -> ParamId {
        let t = Tensor::randn(&[rows, cols], std, self.rng);
        self.params.add(name, t)
    }

    fn zeros(&mut self, name: String, n: usize) -> ParamId {
        self.params.add(name, Tensor::zeros(&[n]))
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        Norm {
            gain: self.params.add(format!("{prefix}.gain"), Tensor::filled(&[d], 1.0)),
            bias: self.zeros(format!("{prefix}.bias"), d),
        }
    }

    fn attention(&mut self, prefix: &str, d: usize, out_std: f64) -> Attention {
        let std = 1.0 / (d as f64).sqrt();
        Attention {
            wq: self.matrix(format!("{prefix}.wq"), d, d, std),
            wk: self.matrix(format!("{prefix}.wk"), d, d, std),
            wv: self.matrix(format!("{prefix}.wv"), d, d, std),
            wo: self.matrix(format!("{prefix}.wo"), d, d, out_std),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, d_ff: usize, out_std: f64) -> FeedForward {
        FeedForward {
            w1: self.matrix(format!("{prefix}.w1"), d, d_ff, 1.0 / (d as f64).sqrt()),
            b1: self.zeros(format!("{prefix}.b1"), d_ff),
            w2: self.matrix(format!("{prefix}.w2"), d_ff, d, out_std),
            b2: self.zeros(format!("{prefix}.b2"), d),
        }
    }
}

/// Memory-free encoder-decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2Seq {
    cfg: ModelConfig,
    params: ParamGroup,
    embed: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
}

impl Seq2Seq {
    pub fn new(cfg: ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamGroup::new(BACKBONE_GROUP);
        let d = cfg.d_model;
        let resid_std = 1.0 / (d as f64).sqrt() / ((2 * cfg.n_layers) as f64).sqrt();
        let ff_out_std = 1.0 / (cfg.d_ff as f64).sqrt() / ((2 * cfg.n_layers) as f64).sqrt();
        let mut b = Builder {
            params: &mut params,
            rng,
        };
        let embed = b.matrix("embed".into(), cfg.vocab_size, d, 1.0 / (d as f64).sqrt());
        let enc_pos = b.matrix("encoder.pos".into(), cfg.max_len, d, 0.1);
        let dec_pos = b.matrix("decoder.pos".into(), cfg.max_len, d, 0.1);
        let encoder = (0..cfg.n_layers)
            .map(|i| {
                let p = format!("encoder.{i}");
                EncoderLayer {
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    attn: b.attention(&format!("{p}.attn"), d, resid_std),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, cfg.d_ff, ff_out_std),
                }
            })
            .collect();
        let enc_norm = b.norm("encoder.norm", d);
        let decoder = (0..cfg.n_layers)
            .map(|i| {
                let p = format!("decoder.{i}");
                DecoderLayer {
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    self_attn: b.attention(&format!("{p}.self_attn"), d, resid_std),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    cross_attn: b.attention(&format!("{p}.cross_attn"), d, resid_std),
                    ln3: b.norm(&format!("{p}.ln3"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, cfg.d_ff, ff_out_std),
                }
            })
            .collect();
        let dec_norm = b.norm("decoder.norm", d);
        Ok(Seq2Seq {
            cfg,
            params,
            embed,
            enc_pos,
            dec_pos,
            encoder,
            enc_norm,
            decoder,
            dec_norm,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamGroup {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamGroup {
        &mut self.params
    }

    fn norm(&self, tape: &mut Tape, x: Var, n: &Norm) -> Result<Var> {
        let g = self.params.bind(tape, n.gain);
        let b = self.params.bind(tape, n.bias);
        tape.layer_norm(x, g, b)
    }

    fn attention(&self, tape: &mut Tape, q_in: Var, kv_in: Var, a: &Attention, causal: bool) -> Result<Var> {
        let d = self.cfg.d_model;
        let heads = self.cfg.n_heads;
        let dh = d / heads;
        let wq = self.params.bind(tape, a.wq);
        let wk = self.params.bind(tape, a.wk);
        let wv = self.params.bind(tape, a.wv);
        let wo = self.params.bind(tape, a.wo);
        let q = tape.matmul(q_in, wq)?;
        let k = tape.matmul(kv_in, wk)?;
        let v = tape.matmul(kv_in, wv)?;
        let tq = tape.value(q).rows();
        let tk = tape.value(k).rows();
        let mask: Option<Vec<f64>> = causal.then(|| {
            let mut m = vec![0.0; tq * tk];
            for i in 0..tq {
                for j in (i + 1)..tk {
                    m[i * tk + j] = MASKED;
                }
            }
            m
        });
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh)?,
                    tape.slice_cols(k, h * dh, dh)?,
                    tape.slice_cols(v, h * dh, dh)?,
                )
            };
            let kt = tape.transpose(kh)?;
            let s = tape.matmul(qh, kt)?;
            let mut s = tape.scale(s, scale);
            if let Some(m) = &mask {
                s = tape.shift(s, m)?;
            }
            let p = tape.softmax(s);
            outs.push(tape.matmul(p, vh)?);
        }
        let joined = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        tape.matmul(joined, wo)
    }

    fn ffn(&self, tape: &mut Tape, x: Var, f: &FeedForward) -> Result<Var> {
        let w1 = self.params.bind(tape, f.w1);
        let b1 = self.params.bind(tape, f.b1);
        let w2 = self.params.bind(tape, f.w2);
        let b2 = self.params.bind(tape, f.b2);
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.gelu(h);
        let y = tape.matmul(h, w2)?;
        tape.add_row(y, b2)
    }

    fn positions(&self, tape: &mut Tape, table: ParamId, len: usize) -> Result<Var> {
        let pos = self.params.bind(tape, table);
        let ids: Vec<usize> = (0..len).collect();
        tape.embedding(pos, &ids)
    }

    pub fn encode_var(&self, tape: &mut Tape, input: &EncodedInput) -> Result<EncodedVars> {
        let len = input.len();
        if len > self.cfg.max_len {
            return Err(Error::Input(format!(
                "input length {len} exceeds max_len {}",
                self.cfg.max_len
            )));
        }
        let table = self.params.bind(tape, self.embed);
        let tok = tape.embedding(table, input.ids())?;
        let pos = self.positions(tape, self.enc_pos, len)?;
        let mut x = tape.add(tok, pos)?;
        for layer in &self.encoder {
            let h = self.norm(tape, x, &layer.ln1)?;
            let a = self.attention(tape, h, h, &layer.attn, false)?;
            x = tape.add(x, a)?;
            let h = self.norm(tape, x, &layer.ln2)?;
            let f = self.ffn(tape, h, &layer.ffn)?;
            x = tape.add(x, f)?;
        }
        let hidden = self.norm(tape, x, &self.enc_norm)?;
        let row = tape.slice_rows(hidden, input.z_position(), 1)?;
        let h_z = tape.reshape(row, &[self.cfg.d_model])?;
        Ok(EncodedVars { hidden, h_z })
    }

    /// Embedding row of one token as a `d_model` vector.
    pub fn token_embedding_var(&self, tape: &mut Tape, id: usize) -> Result<Var> {
        let table = self.params.bind(tape, self.embed);
        let row = tape.embedding(table, &[id])?;
        tape.reshape(row, &[self.cfg.d_model])
    }

    /// Causal decoder logits (`T'×V`) over `prefix`. When `start` is given it
    /// replaces the position-0 token embedding.
    pub fn decode_var(&self, tape: &mut Tape, hidden: Var, prefix: &[usize], start: Option<Var>) -> Result<Var> {
        if prefix.is_empty() {
            return Err(Error::Input("decoder prefix is empty".into()));
        }
        if prefix[0] != BOS {
            return Err(Error::Input("decoder prefix must begin with <s>".into()));
        }
        let len = prefix.len();
        if len > self.cfg.max_len {
            return Err(Error::Input(format!(
                "prefix length {len} exceeds max_len {}",
                self.cfg.max_len
            )));
        }
        let table = self.params.bind(tape, self.embed);
        let tok = match start {
            None => tape.embedding(table, prefix)?,
            Some(s) => {
                let first = tape.reshape(s, &[1, self.cfg.d_model])?;
                if len == 1 {
                    first
                } else {
                    let rest = tape.embedding(table, &prefix[1..])?;
                    tape.concat_rows(&[first, rest])?
                }
            }
        };
        let pos = self.positions(tape, self.dec_pos, len)?;
        let mut x = tape.add(tok, pos)?;
        for layer in &self.decoder {
            let h = self.norm(tape, x, &layer.ln1)?;
            let a = self.attention(tape, h, h, &layer.self_attn, true)?;
            x = tape.add(x, a)?;
            let h = self.norm(tape, x, &layer.ln2)?;
            let c = self.attention(tape, h, hidden, &layer.cross_attn, false)?;
            x = tape.add(x, c)?;
            let h = self.norm(tape, x, &layer.ln3)?;
            let f = self.ffn(tape, h, &layer.ffn)?;
            x = tape.add(x, f)?;
        }
        let h = self.norm(tape, x, &self.dec_norm)?;
        let et = tape.transpose(table)?;
        tape.matmul(h, et)
    }

    pub fn encode(&self, input: &EncodedInput) -> Result<EncoderOutput> {
        let mut tape = Tape::new();
        let e = self.encode_var(&mut tape, input)?;
        Ok(EncoderOutput {
            hidden: tape.value(e.hidden).clone(),
            h_z: tape.value(e.h_z).clone(),
        })
    }

    pub(crate) fn from_parts(cfg: ModelConfig, params: ParamGroup) -> Result<Self> {
        let mut shell = Seq2Seq::new(cfg, &mut Rng::new(0))?;
        check_same_layout(&shell.params, &params, "backbone")?;
        shell.params = params;
        Ok(shell)
    }
}

fn check_same_layout(a: &ParamGroup, b: &ParamGroup, what: &str) -> Result<()> {
    let same = a.len() == b.len()
        && a
            .iter()
            .zip(b.iter())
            .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape());
    if same {
        Ok(())
    } else {
        Err(Error::Compatibility(format!("{what} parameters do not match the config")))
    }
}

/// Order-free prediction of conclusion tokens from `concat(H_z, f_z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BowHead {
    params: ParamGroup,
    weight: ParamId,
    bias: ParamId,
    d_in: usize,
}

impl BowHead {
    pub fn new(d_model: usize, d_m: usize, vocab: usize, rng: &mut Rng) -> Self {
        let mut params = ParamGroup::new(BOW_GROUP);
        let d_in = d_model + d_m;
        let weight = params.add(
            "bow.weight",
            Tensor::randn(&[d_in, vocab], 1.0 / (d_in as f64).sqrt(), rng),
        );
        let bias = params.add("bow.bias", Tensor::zeros(&[vocab]));
        BowHead {
            params,
            weight,
            bias,
            d_in,
        }
    }

    pub fn params(&self) -> &ParamGroup {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamGroup {
        &mut self.params
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        self.params.get_mut(self.weight)
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        self.params.get_mut(self.bias)
    }

    /// −Σ_t log softmax(concat(h_z, f_z)·W + b)[c_t].
    pub fn loss_var(&self, tape: &mut Tape, h_z: Var, f_z: Var, target: &[usize]) -> Result<Var> {
        if target.is_empty() {
            return Err(Error::Input("bag-of-words target is empty".into()));
        }
        let x = tape.concat_cols(&[h_z, f_z])?;
        if tape.shape(x) != [self.d_in] {
            return Err(Error::Shape(format!(
                "bow input has shape {:?}, head expects [{}]",
                tape.shape(x),
                self.d_in
            )));
        }
        let x = tape.reshape(x, &[1, self.d_in])?;
        let w = self.params.bind(tape, self.weight);
        let b = self.params.bind(tape, self.bias);
        let logits = tape.matmul(x, w)?;
        let v = tape.value(logits).cols();
        let logits = tape.reshape(logits, &[v])?;
        let logits = tape.add(logits, b)?;
        let logp = tape.log_softmax(logits);
        tape.neg_pick(logp, target)
    }

    pub fn loss(&self, h_z: &Tensor, f_z: &Tensor, target: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let h = tape.leaf(h_z.clone());
        let f = tape.leaf(f_z.clone());
        let l = self.loss_var(&mut tape, h, f, target)?;
        Ok(tape.value(l).data()[0])
    }

    pub(crate) fn from_parts(d_model: usize, d_m: usize, vocab: usize, params: ParamGroup) -> Result<Self> {
        let mut shell = BowHead::new(d_model, d_m, vocab, &mut Rng::new(0));
        check_same_layout(&shell.params, &params, "bow")?;
        shell.params = params;
        Ok(shell)
    }
}

/// Σ over positions of −log p(target_t); logits row t predicts target t.
pub fn lm_loss_var(tape: &mut Tape, logits: Var, target: &[usize]) -> Result<Var> {
    if tape.value(logits).rows() != target.len() {
        return Err(Error::Input(format!(
            "lm loss: {} logit rows for {} targets",
            tape.value(logits).rows(),
            target.len()
        )));
    }
    tape.cross_entropy(logits, target)
}

pub fn lm_loss(logits: &Tensor, target: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.leaf(logits.clone());
    let out = lm_loss_var(&mut tape, l, target)?;
    Ok(tape.value(out).data()[0])
}

/// How the memory is consulted on one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum SelectPlan {
    /// Gumbel-softmax with pre-drawn noise.
    Gumbel { temperature: f64, noise: Vec<f64> },
    Softmax,
    /// Memory unused; the model is a plain encoder-decoder.
    Bypass,
}

/// One teacher-forced training instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: EncodedInput,
    pub decoder_input: Vec<usize>,
    pub target: Vec<usize>,
}

impl Example {
    pub fn new(p1: &[String], p2: &[String], c: &[String], vocab: &Vocabulary) -> Result<Self> {
        let input = encode_pair(p1, p2, vocab)?;
        let (decoder_input, target) = crate::vocab::encode_target(c, vocab);
        Ok(Example {
            input,
            decoder_input,
            target,
        })
    }

    /// Conclusion ids without the closing `</s>`.
    pub fn conclusion(&self) -> &[usize] {
        &self.target[..self.target.len() - 1]
    }
}

/// Loss terms of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct StepLoss {
    pub total: Var,
    pub lm: Var,
    pub bow: Option<Var>,
    pub alpha: Option<Var>,
}

/// Encoder-decoder with pattern memory and bag-of-words head.
#[derive(Clone, Debug, PartialEq)]
pub struct Lmpm {
    backbone: Seq2Seq,
    memory: PatternMemory,
    bow: BowHead,
}

/// Parameter-initialization sub-streams; each component draws from its own
/// so the backbone comes out identical with or without a memory attached.
pub const BACKBONE_STREAM: u64 = 1;
pub const MEMORY_STREAM: u64 = 2;
pub const BOW_STREAM: u64 = 3;

impl Lmpm {
    pub fn new(cfg: ModelConfig, temperature: f64, seed: u64) -> Result<Self> {
        let backbone = Seq2Seq::new(cfg.clone(), &mut Rng::stream(seed, BACKBONE_STREAM))?;
        let memory = PatternMemory::new(cfg.memory_config(temperature), &mut Rng::stream(seed, MEMORY_STREAM))?;
        let bow = BowHead::new(cfg.d_model, cfg.d_m, cfg.vocab_size, &mut Rng::stream(seed, BOW_STREAM));
        Ok(Lmpm {
            backbone,
            memory,
            bow,
        })
    }

    pub fn from_parts(backbone: Seq2Seq, memory: PatternMemory, bow: BowHead) -> Result<Self> {
        let cfg = backbone.config();
        let mc = memory.config();
        if mc.d_enc != cfg.d_model || mc.d_model != cfg.d_model || mc.slots != cfg.slots || mc.d_m != cfg.d_m {
            return Err(Error::Compatibility("memory does not fit the backbone".into()));
        }
        Ok(Lmpm {
            backbone,
            memory,
            bow,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        self.backbone.config()
    }

    pub fn backbone(&self) -> &Seq2Seq {
        &self.backbone
    }

    pub fn backbone_mut(&mut self) -> &mut Seq2Seq {
        &mut self.backbone
    }

    pub fn memory(&self) -> &PatternMemory {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut PatternMemory {
        &mut self.memory
    }

    pub fn bow(&self) -> &BowHead {
        &self.bow
    }

    pub fn bow_mut(&mut self) -> &mut BowHead {
        &mut self.bow
    }

    pub fn groups(&self) -> [&ParamGroup; 3] {
        [self.backbone.params(), self.memory.params(), self.bow.params()]
    }

    pub fn groups_mut(&mut self) -> [&mut ParamGroup; 3] {
        [
            self.backbone.params_mut(),
            self.memory.params_mut(),
            self.bow.params_mut(),
        ]
    }

    /// Slot weights on the tape; `None` for bypass.
    pub fn select_var(&self, tape: &mut Tape, h_z: Var, plan: &SelectPlan) -> Result<Option<(Var, Var)>> {
        match plan {
            SelectPlan::Bypass => Ok(None),
            SelectPlan::Softmax => {
                let g = self.memory.address_var(tape, h_z)?;
                Ok(Some((g, tape.softmax(g))))
            }
            SelectPlan::Gumbel { temperature, noise } => {
                let g = self.memory.address_var(tape, h_z)?;
                let a = gumbel_weights(tape, g, noise, *temperature)?;
                Ok(Some((g, a)))
            }
        }
    }

    /// Decoder logits with `f_z` injected into the start token; `None`
    /// decodes without touching the memory.
    pub fn decode_var(&self, tape: &mut Tape, enc: EncodedVars, f_z: Option<Var>, prefix: &[usize]) -> Result<Var> {
        let start = match f_z {
            None => None,
            Some(f) => {
                let e = self.backbone.token_embedding_var(tape, BOS)?;
                Some(self.memory.inject_var(tape, f, e)?)
            }
        };
        self.backbone.decode_var(tape, enc.hidden, prefix, start)
    }

    /// ℒ_LM (+ ℒ_BOW when `with_bow` and the memory is in use).
    pub fn step_loss(&self, tape: &mut Tape, ex: &Example, plan: &SelectPlan, with_bow: bool) -> Result<StepLoss> {
        let enc = self.backbone.encode_var(tape, &ex.input)?;
        let sel = self.select_var(tape, enc.h_z, plan)?;
        let f_z = match sel {
            Some((_, a)) => Some(self.memory.lookup_var(tape, a)?),
            None => None,
        };
        let logits = self.decode_var(tape, enc, f_z, &ex.decoder_input)?;
        let lm = lm_loss_var(tape, logits, &ex.target)?;
        let bow = match (with_bow, f_z) {
            (true, Some(f)) => Some(self.bow.loss_var(tape, enc.h_z, f, ex.conclusion_or_eos())?),
            _ => None,
        };
        let total = match bow {
            Some(b) => tape.add(lm, b)?,
            None => lm,
        };
        Ok(StepLoss {
            total,
            lm,
            bow,
            alpha: sel.map(|(_, a)| a),
        })
    }

    pub fn encode(&self, input: &EncodedInput) -> Result<EncoderOutput> {
        self.backbone.encode(input)
    }

    /// Logits for `prefix` given an explicit `f_z` value (`None` skips the
    /// memory entirely).
    pub fn decode_logits(&self, input: &EncodedInput, f_z: Option<&Tensor>, prefix: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let enc = self.backbone.encode_var(&mut tape, input)?;
        let f = f_z.map(|t| tape.leaf(t.clone()));
        let logits = self.decode_var(&mut tape, enc, f, prefix)?;
        Ok(tape.value(logits).clone())
    }

    /// Softmax slot weights for a premise pair.
    pub fn soft_selection(&self, input: &EncodedInput) -> Result<Selection> {
        let enc = self.backbone.encode(input)?;
        let gamma = self.memory.address(&enc.h_z)?;
        select_softmax(&gamma)
    }

    /// Argmax decoding from `<s>` until `</s>` or `max_steps` tokens.
    pub fn greedy_decode(&self, input: &EncodedInput, plan: &SelectPlan, max_steps: usize) -> Result<Vec<usize>> {
        if max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        let mut tape = Tape::new();
        let enc = self.backbone.encode_var(&mut tape, input)?;
        let f_z = match self.select_var(&mut tape, enc.h_z, plan)? {
            Some((_, a)) => Some(self.memory.lookup_var(&mut tape, a)?),
            None => None,
        };
        let limit = max_steps.min(self.config().max_len - 1);
        let mut prefix = vec![BOS];
        let mut out = Vec::new();
        let mark = tape.len();
        for _ in 0..limit {
            let logits = self.decode_var(&mut tape, enc, f_z, &prefix)?;
            let v = tape.value(logits);
            let next = argmax(v.row(v.rows() - 1));
            if next == EOS {
                break;
            }
            out.push(next);
            prefix.push(next);
            debug_assert!(tape.len() > mark);
        }
        Ok(out)
    }

    /// Generates a conclusion for two premise texts with softmax selection.
    pub fn generate(&self, p1: &[String], p2: &[String], vocab: &Vocabulary, max_steps: usize) -> Result<Vec<String>> {
        let input = encode_pair(p1, p2, vocab)?;
        let ids = self.greedy_decode(&input, &SelectPlan::Softmax, max_steps)?;
        Ok(vocab.decode(&ids))
    }
}

impl Example {
    fn conclusion_or_eos(&self) -> &[usize] {
        if self.target.len() > 1 {
            self.conclusion()
        } else {
            &self.target
        }
    }
}
