// SPDX-License-Identifier: Apache-2.0

//! Small differentiable image classifiers with hand-written backprop.
//!
//! All arithmetic is `f64` and sequential, so a fixed parameter set, input
//! and reduction order always produce bit-identical outputs.

pub mod layers;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use layers::*;

pub const CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Multinomial logistic regression on raw pixels.
    SoftmaxLinear,
    /// One tanh hidden layer.
    Mlp { hidden: usize },
    /// Three conv3x3+ReLU blocks (max-pool after the first two), global
    /// average pooling and a linear head.
    TinyCnn { widths: [usize; 3] },
}

impl Architecture {
    pub const DEFAULT_CNN_WIDTHS: [usize; 3] = [8, 16, 32];

    pub fn id(&self) -> String {
        self.to_string()
    }

    /// Whether the forward pass is smooth in the parameters (no ReLU or
    /// max-pool kinks).
    pub fn is_smooth(&self) -> bool {
        !matches!(self, Architecture::TinyCnn { .. })
    }

    pub fn check_input_size(&self, input_size: usize) -> Result<()> {
        if let Architecture::TinyCnn { .. } = self {
            if input_size < 4 || input_size % 4 != 0 {
                return Err(Error::InvalidParameter(format!(
                    "tiny-cnn needs an input size divisible by 4, got {input_size}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::SoftmaxLinear => f.write_str("softmax-linear"),
            Architecture::Mlp { hidden } => write!(f, "mlp-{hidden}"),
            Architecture::TinyCnn { widths } if *widths == Self::DEFAULT_CNN_WIDTHS => f.write_str("tiny-cnn"),
            Architecture::TinyCnn { widths: [a, b, c] } => write!(f, "tiny-cnn-{a}-{b}-{c}"),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownArchitecture(s.to_string());
        let dims = |rest: &str| -> Result<Vec<usize>> {
            rest.split('-')
                .map(|p| p.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(unknown))
                .collect()
        };
        match s {
            "softmax-linear" => Ok(Architecture::SoftmaxLinear),
            "tiny-cnn" => Ok(Architecture::TinyCnn {
                widths: Self::DEFAULT_CNN_WIDTHS,
            }),
            _ => {
                if let Some(rest) = s.strip_prefix("tiny-cnn-") {
                    match dims(rest)?.as_slice() {
                        &[a, b, c] => Ok(Architecture::TinyCnn { widths: [a, b, c] }),
                        _ => Err(unknown()),
                    }
                } else if let Some(rest) = s.strip_prefix("mlp-") {
                    match dims(rest)?.as_slice() {
                        &[hidden] => Ok(Architecture::Mlp { hidden }),
                        _ => Err(unknown()),
                    }
                } else {
                    Err(unknown())
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Gradient buffers laid out like `Network::params`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().flatten().for_each(|g| *g *= k);
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub input_size: usize,
    pub num_classes: usize,
    pub params: Vec<Param>,
}

/// Intermediate activations kept for the backward pass.
pub struct Cache {
    input: Vec<f64>,
    acts: Vec<Vec<f64>>,
    pool_args: Vec<Vec<usize>>,
    features: Vec<f64>,
}

impl Network {
    /// Randomly initialized network (He-normal for ReLU layers, scaled
    /// normal for the rest, zero biases).
    pub fn new(arch: Architecture, input_size: usize, num_classes: usize, seed: u64) -> Result<Network> {
        arch.check_input_size(input_size)?;
        if num_classes < 2 {
            return Err(Error::InvalidParameter(format!("num_classes {num_classes} < 2")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
        let mut params = Vec::new();
        let mut add = |name: &str, shape: Vec<usize>, fan_in: usize, gain: f64, rng: &mut ChaCha8Rng| {
            let len = shape.iter().product();
            let data = if fan_in == 0 {
                vec![0.0; len]
            } else {
                let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("valid std");
                (0..len).map(|_| normal.sample(rng)).collect()
            };
            params.push(Param {
                name: name.to_string(),
                shape,
                data,
            });
        };
        let n_in = CHANNELS * input_size * input_size;
        match arch {
            Architecture::SoftmaxLinear => {
                add("fc.weight", vec![num_classes, n_in], n_in, 1.0, &mut rng);
                add("fc.bias", vec![num_classes], 0, 0.0, &mut rng);
            }
            Architecture::Mlp { hidden } => {
                add("hidden.weight", vec![hidden, n_in], n_in, 1.0, &mut rng);
                add("hidden.bias", vec![hidden], 0, 0.0, &mut rng);
                add("fc.weight", vec![num_classes, hidden], hidden, 1.0, &mut rng);
                add("fc.bias", vec![num_classes], 0, 0.0, &mut rng);
            }
            Architecture::TinyCnn { widths } => {
                let mut c_in = CHANNELS;
                for (i, &c_out) in widths.iter().enumerate() {
                    add(&format!("conv{}.weight", i + 1), vec![c_out, c_in, 3, 3], c_in * 9, 2.0, &mut rng);
                    add(&format!("conv{}.bias", i + 1), vec![c_out], 0, 0.0, &mut rng);
                    c_in = c_out;
                }
                add("fc.weight", vec![num_classes, c_in], c_in, 1.0, &mut rng);
                add("fc.bias", vec![num_classes], 0, 0.0, &mut rng);
            }
        }
        Ok(Network {
            arch,
            input_size,
            num_classes,
            params,
        })
    }

    pub fn input_len(&self) -> usize {
        CHANNELS * self.input_size * self.input_size
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(self.params.iter().map(|p| vec![0.0; p.data.len()]).collect())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for p in &mut self.params {
            let n = p.data.len();
            p.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    fn p(&self, i: usize) -> &[f64] {
        &self.params[i].data
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).0
    }

    /// Penultimate-layer activations; `None` when the architecture has no
    /// hidden representation.
    pub fn features(&self, x: &[f64]) -> Option<Vec<f64>> {
        match self.arch {
            Architecture::SoftmaxLinear => None,
            _ => Some(self.forward(x).1.features),
        }
    }

    pub fn feature_width(&self) -> Option<usize> {
        match self.arch {
            Architecture::SoftmaxLinear => None,
            Architecture::Mlp { hidden } => Some(hidden),
            Architecture::TinyCnn { widths } => Some(widths[2]),
        }
    }

    /// Argmax class, ties resolved to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Cache) {
        assert_eq!(x.len(), self.input_len(), "input length");
        let mut cache = Cache {
            input: x.to_vec(),
            acts: Vec::new(),
            pool_args: Vec::new(),
            features: Vec::new(),
        };
        let logits = match self.arch {
            Architecture::SoftmaxLinear => linear_forward(x, self.p(0), self.p(1), self.num_classes),
            Architecture::Mlp { hidden } => {
                let mut h = linear_forward(x, self.p(0), self.p(1), hidden);
                h.iter_mut().for_each(|v| *v = v.tanh());
                let out = linear_forward(&h, self.p(2), self.p(3), self.num_classes);
                cache.features = h;
                out
            }
            Architecture::TinyCnn { widths } => {
                let mut side = self.input_size;
                let mut c_in = CHANNELS;
                let mut cur = x.to_vec();
                for (i, &c_out) in widths.iter().enumerate() {
                    let mut a = conv3x3_forward(&cur, c_in, side, side, self.p(2 * i), self.p(2 * i + 1), c_out);
                    relu_inplace(&mut a);
                    cur = if i < 2 {
                        let (pooled, arg) = maxpool2_forward(&a, c_out, side, side);
                        cache.pool_args.push(arg);
                        side /= 2;
                        pooled
                    } else {
                        a.clone()
                    };
                    // Keep the conv input for each block and the last activation.
                    cache.acts.push(a);
                    cache.acts.push(cur.clone());
                    c_in = c_out;
                }
                let plane = (side * side) as f64;
                let feats: Vec<f64> = (0..c_in)
                    .map(|c| cur[c * side * side..(c + 1) * side * side].iter().sum::<f64>() / plane)
                    .collect();
                let out = linear_forward(&feats, self.p(6), self.p(7), self.num_classes);
                cache.features = feats;
                out
            }
        };
        (logits, cache)
    }

    /// Parameter gradient of a scalar objective given its gradient with
    /// respect to the logits.
    pub fn backward(&self, cache: &Cache, dlogits: &[f64], grads: &mut Grads) {
        let g = &mut grads.0;
        match self.arch {
            Architecture::SoftmaxLinear => {
                let (gw, rest) = g.split_at_mut(1);
                linear_backward(&cache.input, self.p(0), dlogits, &mut gw[0], &mut rest[0], false);
            }
            Architecture::Mlp { .. } => {
                let (head, tail) = g.split_at_mut(2);
                let (gw2, gb2) = tail.split_at_mut(1);
                let dh = linear_backward(&cache.features, self.p(2), dlogits, &mut gw2[0], &mut gb2[0], true)
                    .expect("input grad");
                let dpre: Vec<f64> = dh.iter().zip(&cache.features).map(|(d, h)| d * (1.0 - h * h)).collect();
                let (gw1, gb1) = head.split_at_mut(1);
                linear_backward(&cache.input, self.p(0), &dpre, &mut gw1[0], &mut gb1[0], false);
            }
            Architecture::TinyCnn { widths } => {
                let (convs, head) = g.split_at_mut(6);
                let (gwf, gbf) = head.split_at_mut(1);
                let dfeat = linear_backward(&cache.features, self.p(6), dlogits, &mut gwf[0], &mut gbf[0], true)
                    .expect("input grad");
                // Sides of each block's input.
                let sides = [self.input_size, self.input_size / 2, self.input_size / 4];
                let last_side = sides[2];
                let plane = last_side * last_side;
                let mut grad: Vec<f64> = (0..widths[2])
                    .flat_map(|c| std::iter::repeat_n(dfeat[c] / plane as f64, plane))
                    .collect();
                for i in (0..3).rev() {
                    let c_out = widths[i];
                    let c_in = if i == 0 { CHANNELS } else { widths[i - 1] };
                    let side = sides[i];
                    let activated = &cache.acts[2 * i];
                    if i < 2 {
                        grad = maxpool2_backward(&grad, &cache.pool_args[i], activated.len());
                    }
                    relu_backward_inplace(&mut grad, activated);
                    let input: &[f64] = if i == 0 { &cache.input } else { &cache.acts[2 * i - 1] };
                    let (gw, gb) = convs[2 * i..2 * i + 2].split_at_mut(1);
                    let gi = conv3x3_backward(
                        input,
                        c_in,
                        side,
                        side,
                        self.p(2 * i),
                        c_out,
                        &grad,
                        &mut gw[0],
                        &mut gb[0],
                        i > 0,
                    );
                    if let Some(gi) = gi {
                        grad = gi;
                    }
                }
            }
        }
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_ids_round_trip() {
        for id in ["softmax-linear", "tiny-cnn", "tiny-cnn-4-8-8", "mlp-16"] {
            let a: Architecture = id.parse().unwrap();
            assert_eq!(a.id(), id);
        }
        assert!("resnet18".parse::<Architecture>().is_err());
        assert!("tiny-cnn-4-8".parse::<Architecture>().is_err());
    }

    fn objective(net: &Network, x: &[f64], w: &[f64]) -> f64 {
        net.logits(x).iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn check_backward(arch: Architecture, side: usize) {
        let mut net = Network::new(arch, side, 3, 5).unwrap();
        let x: Vec<f64> = (0..net.input_len()).map(|i| ((i * 37) % 17) as f64 / 8.5 - 1.0).collect();
        let w = [0.3, -1.1, 0.7];
        let (_, cache) = net.forward(&x);
        let mut grads = net.zero_grads();
        net.backward(&cache, &w, &mut grads);
        let analytic = grads.flat();
        let theta = net.flat_params();
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..theta.len() {
            let mut tp = theta.clone();
            tp[i] += eps;
            net.set_flat_params(&tp);
            let fp = objective(&net, &x, &w);
            tp[i] -= 2.0 * eps;
            net.set_flat_params(&tp);
            let fm = objective(&net, &x, &w);
            let fd = (fp - fm) / (2.0 * eps);
            worst = worst.max((fd - analytic[i]).abs());
        }
        assert!(worst < 1e-6, "{arch}: worst abs deviation {worst}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        check_backward(Architecture::SoftmaxLinear, 4);
        check_backward(Architecture::Mlp { hidden: 5 }, 4);
        check_backward(Architecture::TinyCnn { widths: [2, 3, 4] }, 8);
    }

    #[test]
    fn softmax_is_normalized_and_stable() {
        let p = softmax(&[1000.0, 1000.0, 999.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p[0] == p[1] && p[2] < p[0]);
    }
}
