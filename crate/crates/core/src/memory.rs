//! External pattern memory: `L` learned slot vectors, an address head that
//! maps the premise summary `H_z` to slot logits, and the two selection
//! rules (Gumbel-softmax while pre-training, plain softmax while
//! fine-tuning). The selected pattern `f_z` is added to the decoder's start
//! token embedding.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, MEMORY_GROUP};

/// Standard deviation of the slot initialization.
pub const SLOT_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    /// Number of slots, `L`.
    pub slots: usize,
    /// Slot width, `d_m`.
    pub d_m: usize,
    /// Width of `H_z`.
    pub d_enc: usize,
    /// Width of the decoder start embedding.
    pub d_model: usize,
    /// Extra GELU layers in the address head before the affine output.
    #[serde(default)]
    pub address_hidden: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    1.0
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("slots", self.slots),
            ("d_m", self.d_m),
            ("d_enc", self.d_enc),
            ("d_model", self.d_model),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("memory.{name} must be positive")));
            }
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("memory.temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    GumbelHard,
    SoftmaxSoft,
    Bypass,
}

/// Slot logits and the weights derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub gamma: Tensor,
    pub alpha: Tensor,
    pub mode: SelectionMode,
}

impl Selection {
    /// All-zero weights: the memory contributes nothing.
    pub fn bypass(slots: usize) -> Self {
        Selection {
            gamma: Tensor::zeros(&[slots]),
            alpha: Tensor::zeros(&[slots]),
            mode: SelectionMode::Bypass,
        }
    }

    pub fn slots(&self) -> usize {
        self.alpha.numel()
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {t}")))
    }
}

/// Tape form of the Gumbel rule: softmax((γ + g) / 𝒯) with pre-drawn noise.
pub fn gumbel_weights(tape: &mut Tape, gamma: Var, noise: &[f64], temperature: f64) -> Result<Var> {
    check_temperature(temperature)?;
    let shifted = tape.shift(gamma, noise)?;
    let scaled = tape.scale(shifted, 1.0 / temperature);
    Ok(tape.softmax(scaled))
}

/// Draws one Gumbel vector of length `slots`.
pub fn draw_noise(rng: &mut Rng, slots: usize) -> Vec<f64> {
    (0..slots).map(|_| rng.gumbel()).collect()
}

/// α = softmax((γ + g) / 𝒯), g i.i.d. standard Gumbel.
pub fn select_gumbel(gamma: &Tensor, temperature: f64, rng: &mut Rng) -> Result<Selection> {
    check_temperature(temperature)?;
    let noise = draw_noise(rng, gamma.numel());
    select_gumbel_with_noise(gamma, temperature, &noise)
}

pub fn select_gumbel_with_noise(gamma: &Tensor, temperature: f64, noise: &[f64]) -> Result<Selection> {
    check_temperature(temperature)?;
    if noise.len() != gamma.numel() {
        return Err(Error::Shape(format!(
            "gumbel noise has {} entries for {} slots",
            noise.len(),
            gamma.numel()
        )));
    }
    let perturbed: Vec<f64> = gamma
        .data()
        .iter()
        .zip(noise)
        .map(|(g, n)| (g + n) / temperature)
        .collect();
    Ok(Selection {
        gamma: gamma.clone(),
        alpha: Tensor::vector(softmax(&perturbed)?)?,
        mode: SelectionMode::GumbelHard,
    })
}

/// α̃ = softmax(γ).
pub fn select_softmax(gamma: &Tensor) -> Result<Selection> {
    Ok(Selection {
        gamma: gamma.clone(),
        alpha: Tensor::vector(softmax(gamma.data())?)?,
        mode: SelectionMode::SoftmaxSoft,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternMemory {
    cfg: MemoryConfig,
    params: ParamGroup,
    slots: ParamId,
    hidden: Vec<(ParamId, ParamId)>,
    w_z: ParamId,
    b_z: ParamId,
    proj: Option<ParamId>,
}

impl PatternMemory {
    pub fn new(cfg: MemoryConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamGroup::new(MEMORY_GROUP);
        let slots = params.add("memory.slots", Tensor::randn(&[cfg.slots, cfg.d_m], SLOT_INIT_STD, rng));
        let head_std = 1.0 / (cfg.d_enc as f64).sqrt();
        let hidden = (0..cfg.address_hidden)
            .map(|i| {
                let w = params.add(
                    format!("memory.address.{i}.weight"),
                    Tensor::randn(&[cfg.d_enc, cfg.d_enc], head_std, rng),
                );
                let b = params.add(format!("memory.address.{i}.bias"), Tensor::zeros(&[cfg.d_enc]));
                (w, b)
            })
            .collect();
        let w_z = params.add("memory.w_z", Tensor::randn(&[cfg.d_enc, cfg.slots], head_std, rng));
        let b_z = params.add("memory.b_z", Tensor::zeros(&[cfg.slots]));
        let proj = (cfg.d_m != cfg.d_model).then(|| {
            params.add(
                "memory.proj",
                Tensor::randn(&[cfg.d_m, cfg.d_model], 1.0 / (cfg.d_m as f64).sqrt(), rng),
            )
        });
        Ok(PatternMemory {
            cfg,
            params,
            slots,
            hidden,
            w_z,
            b_z,
            proj,
        })
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.cfg
    }

    pub fn num_slots(&self) -> usize {
        self.cfg.slots
    }

    pub fn temperature(&self) -> f64 {
        self.cfg.temperature
    }

    pub fn set_temperature(&mut self, t: f64) -> Result<()> {
        check_temperature(t)?;
        self.cfg.temperature = t;
        Ok(())
    }

    pub fn params(&self) -> &ParamGroup {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamGroup {
        &mut self.params
    }

    /// The `L×d_m` slot matrix.
    pub fn slots(&self) -> &Tensor {
        self.params.get(self.slots)
    }

    pub fn slots_mut(&mut self) -> &mut Tensor {
        self.params.get_mut(self.slots)
    }

    pub fn w_z(&self) -> &Tensor {
        self.params.get(self.w_z)
    }

    pub fn w_z_mut(&mut self) -> &mut Tensor {
        self.params.get_mut(self.w_z)
    }

    pub fn b_z(&self) -> &Tensor {
        self.params.get(self.b_z)
    }

    pub fn b_z_mut(&mut self) -> &mut Tensor {
        self.params.get_mut(self.b_z)
    }

    pub fn proj(&self) -> Option<&Tensor> {
        self.proj.map(|p| self.params.get(p))
    }

    pub fn proj_mut(&mut self) -> Option<&mut Tensor> {
        self.proj.map(|p| self.params.get_mut(p))
    }

    /// γ = H_z · w_z + b_z (after any hidden address layers).
    pub fn address_var(&self, tape: &mut Tape, h_z: Var) -> Result<Var> {
        if tape.shape(h_z) != [self.cfg.d_enc] {
            return Err(Error::Shape(format!(
                "address: H_z has shape {:?}, expected [{}]",
                tape.shape(h_z),
                self.cfg.d_enc
            )));
        }
        let mut x = tape.reshape(h_z, &[1, self.cfg.d_enc])?;
        for &(w, b) in &self.hidden {
            let wv = self.params.bind(tape, w);
            let bv = self.params.bind(tape, b);
            let y = tape.matmul(x, wv)?;
            let y = tape.add_row(y, bv)?;
            x = tape.gelu(y);
        }
        let w = self.params.bind(tape, self.w_z);
        let b = self.params.bind(tape, self.b_z);
        let g = tape.matmul(x, w)?;
        let g = tape.reshape(g, &[self.cfg.slots])?;
        tape.add(g, b)
    }

    /// f_z = Σ α_i M_i.
    pub fn lookup_var(&self, tape: &mut Tape, alpha: Var) -> Result<Var> {
        if tape.shape(alpha) != [self.cfg.slots] {
            return Err(Error::Shape(format!(
                "lookup: weights have shape {:?}, memory has {} slots",
                tape.shape(alpha),
                self.cfg.slots
            )));
        }
        let a = tape.reshape(alpha, &[1, self.cfg.slots])?;
        let m = self.params.bind(tape, self.slots);
        let f = tape.matmul(a, m)?;
        tape.reshape(f, &[self.cfg.d_m])
    }

    /// E′ = E + f_z (through `proj` when d_m ≠ d_model).
    pub fn inject_var(&self, tape: &mut Tape, f_z: Var, start: Var) -> Result<Var> {
        if tape.shape(f_z) != [self.cfg.d_m] || tape.shape(start) != [self.cfg.d_model] {
            return Err(Error::Shape(format!(
                "inject: f_z {:?} / start {:?} do not match d_m={} d_model={}",
                tape.shape(f_z),
                tape.shape(start),
                self.cfg.d_m,
                self.cfg.d_model
            )));
        }
        let addend = match self.proj {
            Some(p) => {
                let pv = self.params.bind(tape, p);
                let f = tape.reshape(f_z, &[1, self.cfg.d_m])?;
                let y = tape.matmul(f, pv)?;
                tape.reshape(y, &[self.cfg.d_model])?
            }
            None if self.cfg.d_m == self.cfg.d_model => f_z,
            None => {
                return Err(Error::Config(
                    "memory has no projection but d_m differs from d_model".into(),
                ))
            }
        };
        tape.add(start, addend)
    }

    pub fn address(&self, h_z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let h = tape.leaf(h_z.clone());
        let g = self.address_var(&mut tape, h)?;
        Ok(tape.value(g).clone())
    }

    /// Weighted row combination of the slots; bypass gives zeros.
    pub fn lookup(&self, sel: &Selection) -> Result<Tensor> {
        if sel.mode == SelectionMode::Bypass {
            return Ok(Tensor::zeros(&[self.cfg.d_m]));
        }
        let mut tape = Tape::new();
        let a = tape.leaf(sel.alpha.clone());
        let f = self.lookup_var(&mut tape, a)?;
        Ok(tape.value(f).clone())
    }

    pub fn inject(&self, f_z: &Tensor, start: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = tape.leaf(f_z.clone());
        let s = tape.leaf(start.clone());
        let out = self.inject_var(&mut tape, f, s)?;
        Ok(tape.value(out).clone())
    }

    /// Removes the projection; used to exercise the missing-adapter error.
    #[doc(hidden)]
    pub fn drop_projection(&mut self) {
        self.proj = None;
    }

    pub(crate) fn from_parts(cfg: MemoryConfig, params: ParamGroup) -> Result<Self> {
        cfg.validate()?;
        let mut tmp = Rng::new(0);
        let mut shell = PatternMemory::new(cfg, &mut tmp)?;
        if shell.params.len() != params.len()
            || shell
                .params
                .iter()
                .zip(params.iter())
                .any(|((n1, t1), (n2, t2))| n1 != n2 || t1.shape() != t2.shape())
        {
            return Err(Error::Compatibility("memory parameters do not match config".into()));
        }
        shell.params = params;
        Ok(shell)
    }
}
