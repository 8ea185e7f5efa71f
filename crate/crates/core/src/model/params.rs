//! Trainable parameters and their fixed enumeration order.
//!
//! The order below is the serialization contract of the model file and the
//! layout of flattened parameter/gradient vectors:
//!
//! 1. `embed.weight` (d_f × d_e), `embed.bias` (1 × d_e)
//! 2. for each block:
//!    `norm1.gamma`, `norm1.beta`,
//!    for each flow set (1 when shared, else summary, distribution,
//!    classification): `query`, `key`, `value` (d_e × d_e, no bias),
//!    `out.weight`, `out.bias`, `norm2.gamma`, `norm2.beta`,
//!    `ff_in.weight` (d_e × d_ff), `ff_in.bias`,
//!    `ff_out.weight` (d_ff × d_e), `ff_out.bias`
//! 3. `kernel_seed` (1 × d_e), `cls_token` (1 × d_e)
//! 4. `head.weight` (d_e × C), `head.bias` (1 × C)

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::KatConfig;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{KatError, Result};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Affine<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm<T> {
    pub gamma: T,
    pub beta: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projections<T> {
    pub query: T,
    pub key: T,
    pub value: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights<T> {
    pub norm1: Norm<T>,
    pub flows: Vec<Projections<T>>,
    pub out: Affine<T>,
    pub norm2: Norm<T>,
    pub ff_in: Affine<T>,
    pub ff_out: Affine<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KatWeights<T> {
    pub embed: Affine<T>,
    pub blocks: Vec<BlockWeights<T>>,
    /// Single vector copied into every kernel token; K varies per bag.
    pub kernel_seed: T,
    pub cls_token: T,
    pub head: Affine<T>,
}

pub type KatParams = KatWeights<Tensor>;

impl<T> Affine<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Affine<U> {
        Affine {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl<T> Norm<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Norm<U> {
        Norm {
            gamma: f(&self.gamma),
            beta: f(&self.beta),
        }
    }
}

impl<T> Projections<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Projections<U> {
        Projections {
            query: f(&self.query),
            key: f(&self.key),
            value: f(&self.value),
        }
    }
}

impl<T> BlockWeights<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> BlockWeights<U> {
        let norm1 = self.norm1.map(f);
        let flows = self.flows.iter().map(|p| p.map(f)).collect();
        let out = self.out.map(f);
        let norm2 = self.norm2.map(f);
        let ff_in = self.ff_in.map(f);
        let ff_out = self.ff_out.map(f);
        BlockWeights {
            norm1,
            flows,
            out,
            norm2,
            ff_in,
            ff_out,
        }
    }

    /// Projections used by the summary, distribution and classification
    /// flows, in that order.
    pub fn flow(&self, index: usize) -> &Projections<T> {
        &self.flows[index.min(self.flows.len() - 1)]
    }
}

impl<T> KatWeights<T> {
    /// Applies `f` to every tensor in enumeration order.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> KatWeights<U> {
        let f = &mut f;
        let embed = self.embed.map(f);
        let blocks = self.blocks.iter().map(|b| b.map(f)).collect();
        let kernel_seed = f(&self.kernel_seed);
        let cls_token = f(&self.cls_token);
        let head = self.head.map(f);
        KatWeights {
            embed,
            blocks,
            kernel_seed,
            cls_token,
            head,
        }
    }

    /// References to every tensor in enumeration order.
    pub fn iter(&self) -> Vec<&T> {
        let mut out = vec![&self.embed.weight, &self.embed.bias];
        for b in &self.blocks {
            out.extend([&b.norm1.gamma, &b.norm1.beta]);
            for p in &b.flows {
                out.extend([&p.query, &p.key, &p.value]);
            }
            out.extend([&b.out.weight, &b.out.bias, &b.norm2.gamma, &b.norm2.beta]);
            out.extend([&b.ff_in.weight, &b.ff_in.bias, &b.ff_out.weight, &b.ff_out.bias]);
        }
        out.extend([&self.kernel_seed, &self.cls_token, &self.head.weight, &self.head.bias]);
        out
    }

    /// Parameter names in enumeration order.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["embed.weight".to_string(), "embed.bias".to_string()];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            names.push(format!("{p}.norm1.gamma"));
            names.push(format!("{p}.norm1.beta"));
            for f in 0..b.flows.len() {
                for t in ["query", "key", "value"] {
                    names.push(format!("{p}.flows.{f}.{t}"));
                }
            }
            for t in [
                "out.weight",
                "out.bias",
                "norm2.gamma",
                "norm2.beta",
                "ff_in.weight",
                "ff_in.bias",
                "ff_out.weight",
                "ff_out.bias",
            ] {
                names.push(format!("{p}.{t}"));
            }
        }
        names.extend(
            ["kernel_seed", "cls_token", "head.weight", "head.bias"]
                .iter()
                .map(|s| s.to_string()),
        );
        names
    }
}

impl BlockWeights<Tensor> {
    /// Registers every tensor on `tape`, differentiable when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BlockWeights<Var> {
        self.map(&mut |t: &Tensor| bind_one(tape, t, trainable))
    }
}

fn bind_one(tape: &mut Tape, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        tape.param(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

impl KatParams {
    /// Registers every tensor on `tape` in enumeration order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> KatWeights<Var> {
        self.map(|t| bind_one(tape, t, trainable))
    }

    /// Shape skeleton for `config` with every tensor zero-filled.
    pub fn zeros(config: &KatConfig) -> Self {
        let (d_f, d, d_ff, c) = (config.d_f, config.d_e, config.d_ff, config.n_classes);
        let affine = |i: usize, o: usize| Affine {
            weight: Tensor::zeros(&[i, o]),
            bias: Tensor::zeros(&[1, o]),
        };
        let norm = || Norm {
            gamma: Tensor::zeros(&[1, d]),
            beta: Tensor::zeros(&[1, d]),
        };
        let blocks = (0..config.n_blocks)
            .map(|_| BlockWeights {
                norm1: norm(),
                flows: (0..config.flow_sets())
                    .map(|_| Projections {
                        query: Tensor::zeros(&[d, d]),
                        key: Tensor::zeros(&[d, d]),
                        value: Tensor::zeros(&[d, d]),
                    })
                    .collect(),
                out: affine(d, d),
                norm2: norm(),
                ff_in: affine(d, d_ff),
                ff_out: affine(d_ff, d),
            })
            .collect();
        KatWeights {
            embed: affine(d_f, d),
            blocks,
            kernel_seed: Tensor::zeros(&[1, d]),
            cls_token: Tensor::zeros(&[1, d]),
            head: affine(d, c),
        }
    }

    pub fn count(&self) -> usize {
        self.iter().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        for t in self.iter() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrites every parameter from a flat vector in enumeration order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(KatError::Contract(format!(
                "flat parameter vector has {} values, model has {}",
                flat.len(),
                self.count()
            )));
        }
        let mut offset = 0;
        *self = self.map(|t| {
            let n = t.len();
            let data = flat[offset..offset + n].to_vec();
            offset += n;
            Tensor::new(t.shape().to_vec(), data).expect("same size")
        });
        Ok(())
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    loop {
        let z: f64 = normal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Projection weights from a normal truncated at two standard deviations
/// (std 0.02), biases and norm shifts zero, norm gains one, kernel seed and
/// classification token normal with std 0.02.
pub fn init_params(config: &KatConfig, seed: u64) -> Result<KatParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = KatParams::zeros(config);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");

    let fill_trunc = |t: &mut Tensor, rng: &mut ChaCha8Rng| {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = truncated_normal(rng, INIT_STD));
    };
    fill_trunc(&mut params.embed.weight, &mut rng);
    for b in &mut params.blocks {
        b.norm1.gamma.data_mut().fill(1.0);
        for p in &mut b.flows {
            fill_trunc(&mut p.query, &mut rng);
            fill_trunc(&mut p.key, &mut rng);
            fill_trunc(&mut p.value, &mut rng);
        }
        fill_trunc(&mut b.out.weight, &mut rng);
        b.norm2.gamma.data_mut().fill(1.0);
        fill_trunc(&mut b.ff_in.weight, &mut rng);
        fill_trunc(&mut b.ff_out.weight, &mut rng);
    }
    for t in [&mut params.kernel_seed, &mut params.cls_token] {
        t.data_mut().iter_mut().for_each(|v| *v = normal.sample(&mut rng));
    }
    fill_trunc(&mut params.head.weight, &mut rng);
    Ok(params)
}
