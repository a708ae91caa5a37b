//! The hash head, the conditional discriminator, hash codes, and the
//! pluggable distance metric with its gradients.

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Network, Tape};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Maps a d-dimensional feature vector to a K-dimensional vector in (-1, 1)
/// through one ReLU hidden layer and a tanh output layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HashHead {
    net: Network,
}

impl HashHead {
    pub fn new(input_dim: usize, hidden: usize, code_bits: usize, rng: &mut impl Rng) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || code_bits == 0 {
            return Err(Error::config("hash head dimensions must be positive"));
        }
        let net = Network::new(vec![
            DenseLayer::glorot(input_dim, hidden, Activation::Relu, rng),
            DenseLayer::glorot(hidden, code_bits, Activation::Tanh, rng),
        ])?;
        Ok(HashHead { net })
    }

    /// Wraps an arbitrary network whose output layer plays the role of b.
    /// Used by tests and by the finite-difference harness.
    pub fn from_network(net: Network) -> Self {
        HashHead { net }
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn code_bits(&self) -> usize {
        self.net.out_dim()
    }

    /// b = G(x), with a tape for the generator-phase backward pass.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.net.forward(x)
    }

    /// b = G(x) without a tape (evaluation, class means, discriminator phase).
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.infer(x)
    }
}

/// Conditional discriminator: scores concat(code, label vector) in (0, 1),
/// where 1 means "global prototype" and 0 means "locally generated".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Discriminator {
    net: Network,
    code_bits: usize,
    classes: usize,
}

impl Discriminator {
    pub fn new(code_bits: usize, classes: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if code_bits == 0 || classes == 0 || hidden == 0 {
            return Err(Error::config("discriminator dimensions must be positive"));
        }
        let net = Network::new(vec![
            DenseLayer::glorot(code_bits + classes, hidden, Activation::Relu, rng),
            DenseLayer::glorot(hidden, 1, Activation::Sigmoid, rng),
        ])?;
        Ok(Discriminator {
            net,
            code_bits,
            classes,
        })
    }

    /// Wraps an arbitrary scalar-output network as the discriminator. Used by
    /// tests that need exact output probabilities.
    pub fn from_network(net: Network, code_bits: usize, classes: usize) -> Result<Self> {
        if net.in_dim() != code_bits + classes || net.out_dim() != 1 {
            return Err(Error::config(format!(
                "discriminator network must map {} -> 1, got {} -> {}",
                code_bits + classes,
                net.in_dim(),
                net.out_dim()
            )));
        }
        Ok(Discriminator {
            net,
            code_bits,
            classes,
        })
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn code_bits(&self) -> usize {
        self.code_bits
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Builds the conditional input concat(code, labels).
    pub fn input_vector(&self, code: &[f64], labels: &[u8]) -> Result<Vec<f64>> {
        if code.len() != self.code_bits || labels.len() != self.classes {
            return Err(Error::usage(format!(
                "discriminator input shapes ({}, {}) do not match ({}, {})",
                code.len(),
                labels.len(),
                self.code_bits,
                self.classes
            )));
        }
        let mut v = Vec::with_capacity(self.code_bits + self.classes);
        v.extend_from_slice(code);
        v.extend(labels.iter().map(|&l| l as f64));
        Ok(v)
    }

    /// D(code | labels) with a tape for backward passes.
    pub fn score(&self, code: &[f64], labels: &[u8]) -> Result<(f64, Tape)> {
        let input = self.input_vector(code, labels)?;
        let (out, tape) = self.net.forward(&input)?;
        Ok((out[0], tape))
    }
}

/// A binarized hash code: every entry is exactly -1 or +1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HashCode {
    bits: Vec<i8>,
}

impl HashCode {
    /// Constructs from raw ±1 entries.
    pub fn from_bits(bits: Vec<i8>) -> Result<Self> {
        if bits.iter().any(|&b| b != 1 && b != -1) {
            return Err(Error::usage("hash code entries must be -1 or +1"));
        }
        Ok(HashCode { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[i8] {
        &self.bits
    }

    pub fn as_f64_vec(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }

    /// Number of differing positions.
    pub fn hamming(&self, other: &HashCode) -> Result<u32> {
        if self.len() != other.len() {
            return Err(Error::usage(format!(
                "hamming distance of codes with lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count() as u32)
    }
}

/// Entry-wise sign with sign(0) = +1.
pub fn binarize(b: &[f64]) -> HashCode {
    HashCode {
        bits: b.iter().map(|&v| if v < 0.0 { -1i8 } else { 1i8 }).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Cosine,
    Euclidean,
}

impl Default for DistanceMetric {
    fn default() -> Self {
        DistanceMetric::Cosine
    }
}

impl DistanceMetric {
    /// The default triplet margin for this metric, used when the config does
    /// not pin one: 0.4 for cosine (range [0,2]), 1.0 for Euclidean.
    pub fn default_margin(self) -> f64 {
        match self {
            DistanceMetric::Cosine => 0.4,
            DistanceMetric::Euclidean => 1.0,
        }
    }
}

const ZERO_NORM_GUARD: f64 = 1e-12;

/// Cosine: 1 - u·v / (|u||v|), in [0, 2]. Euclidean: |u - v|.
pub fn distance(u: &[f64], v: &[f64], metric: DistanceMetric) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::usage(format!(
            "distance of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    match metric {
        DistanceMetric::Cosine => {
            let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
            for (a, b) in u.iter().zip(v) {
                dot += a * b;
                nu += a * a;
                nv += b * b;
            }
            let (nu, nv) = (nu.sqrt(), nv.sqrt());
            if nu < ZERO_NORM_GUARD || nv < ZERO_NORM_GUARD {
                return Err(Error::domain("cosine distance of a zero vector"));
            }
            Ok(1.0 - dot / (nu * nv))
        }
        DistanceMetric::Euclidean => {
            let mut s = 0.0;
            for (a, b) in u.iter().zip(v) {
                let d = a - b;
                s += d * d;
            }
            Ok(s.sqrt())
        }
    }
}

/// Distance plus its gradients: accumulates `scale * ∂d/∂u` into `grad_u` and
/// `scale * ∂d/∂v` into `grad_v` (either may be None for constant arguments,
/// e.g. prototypes). The Euclidean gradient at u = v is taken as 0.
pub fn distance_with_grad(
    u: &[f64],
    v: &[f64],
    metric: DistanceMetric,
    scale: f64,
    mut grad_u: Option<&mut [f64]>,
    mut grad_v: Option<&mut [f64]>,
) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::usage(format!(
            "distance of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    match metric {
        DistanceMetric::Cosine => {
            let (mut dot, mut nu2, mut nv2) = (0.0, 0.0, 0.0);
            for (a, b) in u.iter().zip(v) {
                dot += a * b;
                nu2 += a * a;
                nv2 += b * b;
            }
            let (nu, nv) = (nu2.sqrt(), nv2.sqrt());
            if nu < ZERO_NORM_GUARD || nv < ZERO_NORM_GUARD {
                return Err(Error::domain("cosine distance of a zero vector"));
            }
            // d = 1 - dot/(|u||v|)
            // ∂d/∂u_i = dot * u_i / (|u|^3 |v|) - v_i / (|u||v|)
            if let Some(g) = grad_u.as_deref_mut() {
                let c1 = dot / (nu * nu * nu * nv);
                let c2 = 1.0 / (nu * nv);
                for i in 0..u.len() {
                    g[i] += scale * (c1 * u[i] - c2 * v[i]);
                }
            }
            if let Some(g) = grad_v.as_deref_mut() {
                let c1 = dot / (nv * nv * nv * nu);
                let c2 = 1.0 / (nu * nv);
                for i in 0..v.len() {
                    g[i] += scale * (c1 * v[i] - c2 * u[i]);
                }
            }
            Ok(1.0 - dot / (nu * nv))
        }
        DistanceMetric::Euclidean => {
            let mut s = 0.0;
            for (a, b) in u.iter().zip(v) {
                let d = a - b;
                s += d * d;
            }
            let d = s.sqrt();
            if d > ZERO_NORM_GUARD {
                if let Some(g) = grad_u.as_deref_mut() {
                    for i in 0..u.len() {
                        g[i] += scale * (u[i] - v[i]) / d;
                    }
                }
                if let Some(g) = grad_v.as_deref_mut() {
                    for i in 0..v.len() {
                        g[i] += scale * (v[i] - u[i]) / d;
                    }
                }
            }
            Ok(d)
        }
    }
}

/// Loss weighting and metric choice shared by every loss term.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    /// Quantization weight μ.
    pub mu: f64,
    /// Adversarial weight λ.
    pub lambda: f64,
    /// Triplet margin a.
    pub margin_a: f64,
    pub distance: DistanceMetric,
}

impl LossWeights {
    pub fn new(mu: f64, lambda: f64, margin_a: f64, distance: DistanceMetric) -> Result<Self> {
        if mu < 0.0 || lambda < 0.0 {
            return Err(Error::config("loss weights mu and lambda must be >= 0"));
        }
        if !(margin_a > 0.0) {
            return Err(Error::config("triplet margin must be > 0"));
        }
        Ok(LossWeights {
            mu,
            lambda,
            margin_a,
            distance,
        })
    }
}

impl Default for LossWeights {
    /// mu = 0.05, lambda = 0.1, cosine metric with its default margin.
    fn default() -> Self {
        LossWeights {
            mu: 0.05,
            lambda: 0.1,
            margin_a: DistanceMetric::Cosine.default_margin(),
            distance: DistanceMetric::Cosine,
        }
    }
}
