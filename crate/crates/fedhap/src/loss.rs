//! Every loss term of the training objective, each with a value-only path and
//! a gradient path that accumulates into caller-owned buffers.
//!
//! Gradients with respect to the soft codes b_j are accumulated into
//! `grad_b[j]`; the caller then backpropagates each grad_b[j] through the
//! hash head. Discriminator parameter gradients accumulate into a
//! GradientBundle. Sign operations are treated as constants (stop-gradient).

use crate::error::{Error, Result};
use crate::model::{distance_with_grad, Discriminator, HashCode, LossWeights};
use crate::nn::GradientBundle;
use crate::prototypes::PrototypeSet;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Indices into one batch. The positive shares at least one label with the
/// anchor; the negative shares none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// A batch anchor paired with a positive-class and negative-class prototype.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalTriplet {
    pub anchor: usize,
    pub pos_class: usize,
    pub neg_class: usize,
}

pub fn labels_share_class(a: &[u8], b: &[u8]) -> bool {
    a.iter().zip(b).any(|(x, y)| *x != 0 && *y != 0)
}

/// Random mining: one uniformly sampled positive and negative per anchor.
/// Anchors with no valid positive or no valid negative in the batch are
/// skipped. Draws from `rng` in ascending anchor order, so the plan is a
/// deterministic function of (labels, rng state).
pub fn mine_local_triplets(labels: &[&[u8]], rng: &mut impl Rng) -> Vec<Triplet> {
    let mut out = Vec::new();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (a, la) in labels.iter().enumerate() {
        positives.clear();
        negatives.clear();
        for (j, lj) in labels.iter().enumerate() {
            if j == a {
                continue;
            }
            if labels_share_class(la, lj) {
                positives.push(j);
            } else {
                negatives.push(j);
            }
        }
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        out.push(Triplet {
            anchor: a,
            positive: positives[rng.gen_range(0..positives.len())],
            negative: negatives[rng.gen_range(0..negatives.len())],
        });
    }
    out
}

/// Pairs each anchor with a uniformly sampled prototype of one of its classes
/// and one of a class it does not carry. Only valid prototypes participate;
/// anchors lacking a valid positive or negative class are skipped. The
/// selection depends on labels and prototype validity, never on code values,
/// so a frozen plan stays valid while parameters are perturbed.
pub fn plan_global_triplets(
    labels: &[&[u8]],
    prototypes: &PrototypeSet,
    rng: &mut impl Rng,
) -> Vec<GlobalTriplet> {
    let classes = prototypes.classes();
    let mut out = Vec::new();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (a, la) in labels.iter().enumerate() {
        pos.clear();
        neg.clear();
        for c in 0..classes {
            if !prototypes.is_valid(c) {
                continue;
            }
            if la.get(c).copied().unwrap_or(0) != 0 {
                pos.push(c);
            } else {
                neg.push(c);
            }
        }
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        out.push(GlobalTriplet {
            anchor: a,
            pos_class: pos[rng.gen_range(0..pos.len())],
            neg_class: neg[rng.gen_range(0..neg.len())],
        });
    }
    out
}

/// A hinge-sum loss value plus diagnostics. `min_abs_hinge_arg` is the
/// smallest |d(a,p) - d(a,n) + margin| over evaluated triplets (infinity when
/// none), used to reject finite-difference probes near a hinge boundary.
/// `empty` flags an empty triplet list (the loss is then 0 by convention).
#[derive(Debug, Clone, Copy)]
pub struct HingeLossOutput {
    pub value: f64,
    pub used: usize,
    pub min_abs_hinge_arg: f64,
    pub empty: bool,
}

impl HingeLossOutput {
    fn empty_batch() -> Self {
        HingeLossOutput {
            value: 0.0,
            used: 0,
            min_abs_hinge_arg: f64::INFINITY,
            empty: true,
        }
    }
}

/// Σ max(d(b_a, b_p) - d(b_a, b_n) + margin, 0) over the mined triplets.
pub fn triplet_loss_local(
    batch_b: &[Vec<f64>],
    triplets: &[Triplet],
    w: &LossWeights,
) -> Result<HingeLossOutput> {
    triplet_local_impl(batch_b, triplets, w, 0.0, None)
}

/// Same value; additionally accumulates `scale * ∂loss/∂b_j` into `grad_b[j]`.
pub fn triplet_loss_local_with_grad(
    batch_b: &[Vec<f64>],
    triplets: &[Triplet],
    w: &LossWeights,
    scale: f64,
    grad_b: &mut [Vec<f64>],
) -> Result<HingeLossOutput> {
    if grad_b.len() != batch_b.len() {
        return Err(Error::usage("gradient buffer does not match batch size"));
    }
    triplet_local_impl(batch_b, triplets, w, scale, Some(grad_b))
}

fn triplet_local_impl(
    batch_b: &[Vec<f64>],
    triplets: &[Triplet],
    w: &LossWeights,
    scale: f64,
    mut grad_b: Option<&mut [Vec<f64>]>,
) -> Result<HingeLossOutput> {
    if triplets.is_empty() {
        log::debug!("local triplet loss over an empty triplet list");
        return Ok(HingeLossOutput::empty_batch());
    }
    let n = batch_b.len();
    let mut value = 0.0;
    let mut min_abs = f64::INFINITY;
    for t in triplets {
        if t.anchor >= n || t.positive >= n || t.negative >= n {
            return Err(Error::usage(format!(
                "triplet ({}, {}, {}) out of range for batch of {n}",
                t.anchor, t.positive, t.negative
            )));
        }
        let dp = crate::model::distance(&batch_b[t.anchor], &batch_b[t.positive], w.distance)?;
        let dn = crate::model::distance(&batch_b[t.anchor], &batch_b[t.negative], w.distance)?;
        let arg = dp - dn + w.margin_a;
        min_abs = min_abs.min(arg.abs());
        if arg > 0.0 {
            value += arg;
            if let Some(g) = grad_b.as_deref_mut() {
                // Split borrows: indices are distinct roles but may collide in
                // pathological plans; accumulate through raw index math on a
                // scratch triple instead of split_at_mut gymnastics.
                let mut ga = vec![0.0; batch_b[t.anchor].len()];
                let mut gp = vec![0.0; ga.len()];
                let mut gn = vec![0.0; ga.len()];
                distance_with_grad(
                    &batch_b[t.anchor],
                    &batch_b[t.positive],
                    w.distance,
                    scale,
                    Some(&mut ga),
                    Some(&mut gp),
                )?;
                distance_with_grad(
                    &batch_b[t.anchor],
                    &batch_b[t.negative],
                    w.distance,
                    -scale,
                    Some(&mut ga),
                    Some(&mut gn),
                )?;
                for (dst, v) in g[t.anchor].iter_mut().zip(&ga) {
                    *dst += v;
                }
                for (dst, v) in g[t.positive].iter_mut().zip(&gp) {
                    *dst += v;
                }
                for (dst, v) in g[t.negative].iter_mut().zip(&gn) {
                    *dst += v;
                }
            }
        }
    }
    Ok(HingeLossOutput {
        value,
        used: triplets.len(),
        min_abs_hinge_arg: min_abs,
        empty: false,
    })
}

/// Σ max(d(b_a, ĥ+) - d(b_a, ĥ-) + margin, 0) against prototype codes.
/// Prototypes are constants: gradients flow only into the anchors.
pub fn triplet_loss_global(
    batch_b: &[Vec<f64>],
    plan: &[GlobalTriplet],
    prototypes: &PrototypeSet,
    w: &LossWeights,
) -> Result<HingeLossOutput> {
    triplet_global_impl(batch_b, plan, prototypes, w, 0.0, None)
}

pub fn triplet_loss_global_with_grad(
    batch_b: &[Vec<f64>],
    plan: &[GlobalTriplet],
    prototypes: &PrototypeSet,
    w: &LossWeights,
    scale: f64,
    grad_b: &mut [Vec<f64>],
) -> Result<HingeLossOutput> {
    if grad_b.len() != batch_b.len() {
        return Err(Error::usage("gradient buffer does not match batch size"));
    }
    triplet_global_impl(batch_b, plan, prototypes, w, scale, Some(grad_b))
}

/// Convenience form that mines the prototype pairs itself.
pub fn triplet_loss_global_mined(
    batch_b: &[Vec<f64>],
    batch_labels: &[&[u8]],
    prototypes: &PrototypeSet,
    w: &LossWeights,
    rng: &mut impl Rng,
) -> Result<HingeLossOutput> {
    let plan = plan_global_triplets(batch_labels, prototypes, rng);
    triplet_loss_global(batch_b, &plan, prototypes, w)
}

fn triplet_global_impl(
    batch_b: &[Vec<f64>],
    plan: &[GlobalTriplet],
    prototypes: &PrototypeSet,
    w: &LossWeights,
    scale: f64,
    mut grad_b: Option<&mut [Vec<f64>]>,
) -> Result<HingeLossOutput> {
    if plan.is_empty() {
        log::debug!("global triplet loss with no usable anchors (no valid prototypes?)");
        return Ok(HingeLossOutput::empty_batch());
    }
    let mut value = 0.0;
    let mut min_abs = f64::INFINITY;
    for t in plan {
        let b = batch_b
            .get(t.anchor)
            .ok_or_else(|| Error::usage("global triplet anchor out of range"))?;
        let pos = prototypes
            .code(t.pos_class)
            .ok_or_else(|| Error::usage("global triplet uses an invalid positive prototype"))?
            .as_f64_vec();
        let neg = prototypes
            .code(t.neg_class)
            .ok_or_else(|| Error::usage("global triplet uses an invalid negative prototype"))?
            .as_f64_vec();
        let dp = crate::model::distance(b, &pos, w.distance)?;
        let dn = crate::model::distance(b, &neg, w.distance)?;
        let arg = dp - dn + w.margin_a;
        min_abs = min_abs.min(arg.abs());
        if arg > 0.0 {
            value += arg;
            if let Some(g) = grad_b.as_deref_mut() {
                distance_with_grad(b, &pos, w.distance, scale, Some(&mut g[t.anchor]), None)?;
                distance_with_grad(b, &neg, w.distance, -scale, Some(&mut g[t.anchor]), None)?;
            }
        }
    }
    Ok(HingeLossOutput {
        value,
        used: plan.len(),
        min_abs_hinge_arg: min_abs,
        empty: false,
    })
}

/// Σ_j ||b_j - sign(b_j)||². The sign is a stop-gradient constant, so the
/// gradient is 2(b_j - sign(b_j)).
pub fn quantization_loss(batch_b: &[Vec<f64>]) -> f64 {
    batch_b
        .iter()
        .flat_map(|b| b.iter())
        .map(|&v| {
            let s = if v < 0.0 { -1.0 } else { 1.0 };
            (v - s) * (v - s)
        })
        .sum()
}

pub fn quantization_loss_with_grad(batch_b: &[Vec<f64>], scale: f64, grad_b: &mut [Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (b, g) in batch_b.iter().zip(grad_b.iter_mut()) {
        for (v, gv) in b.iter().zip(g.iter_mut()) {
            let s = if *v < 0.0 { -1.0 } else { 1.0 };
            let d = v - s;
            total += d * d;
            *gv += scale * 2.0 * d;
        }
    }
    total
}

/// Smallest |b| entry over the batch: the quantization term has a gradient
/// jump where a coordinate crosses 0.
pub fn min_abs_code_entry(batch_b: &[Vec<f64>]) -> f64 {
    batch_b
        .iter()
        .flat_map(|b| b.iter())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

const SIGMOID_CLAMP: f64 = 1e-7;

/// -w * (t ln p + (1-t) ln(1-p)) with p clamped to [1e-7, 1-1e-7].
fn bce_term(p: f64, target: f64, weight: f64) -> f64 {
    let pc = p.clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP);
    -weight * (target * pc.ln() + (1.0 - target) * (1.0 - pc).ln())
}

/// dTerm/dp for the clamped BCE above; zero where the clamp is active, which
/// matches the finite-difference slope of the clamped value.
fn bce_upstream(p: f64, target: f64, weight: f64) -> f64 {
    if p <= SIGMOID_CLAMP || p >= 1.0 - SIGMOID_CLAMP {
        0.0
    } else {
        weight * (p - target) / (p * (1.0 - p))
    }
}

/// The discriminator's objective: binary cross-entropy with local codes
/// labeled 0 ("generated") and prototypes labeled 1 ("global"), averaged
/// within each group. Inputs to D are concat(code, label vector); prototypes
/// use their one-hot class vector.
pub fn discriminator_loss(
    disc: &Discriminator,
    local_codes: &[(HashCode, &[u8])],
    prototypes: &PrototypeSet,
) -> Result<f64> {
    disc_loss_impl(disc, local_codes, prototypes, None)
}

/// Same value; accumulates the gradient with respect to the discriminator's
/// parameters into `grads`.
pub fn discriminator_loss_with_grad(
    disc: &Discriminator,
    local_codes: &[(HashCode, &[u8])],
    prototypes: &PrototypeSet,
    grads: &mut GradientBundle,
) -> Result<f64> {
    disc_loss_impl(disc, local_codes, prototypes, Some(grads))
}

fn disc_loss_impl(
    disc: &Discriminator,
    local_codes: &[(HashCode, &[u8])],
    prototypes: &PrototypeSet,
    mut grads: Option<&mut GradientBundle>,
) -> Result<f64> {
    if local_codes.is_empty() {
        return Err(Error::usage("discriminator loss needs at least one local code"));
    }
    let classes = disc.classes();
    let valid: Vec<usize> = (0..prototypes.classes())
        .filter(|&c| prototypes.is_valid(c))
        .collect();
    if valid.is_empty() {
        return Err(Error::training(
            "no valid prototypes: adversarial training must be disabled this round",
        ));
    }
    let n = local_codes.len() as f64;
    let c_norm = valid.len() as f64;
    let mut total = 0.0;
    for (code, labels) in local_codes {
        let (p, tape) = disc.score(&code.as_f64_vec(), labels)?;
        total += bce_term(p, 0.0, 1.0 / n);
        if let Some(g) = grads.as_deref_mut() {
            let up = bce_upstream(p, 0.0, 1.0 / n);
            disc.net().backward_into(&tape, &[up], g)?;
        }
    }
    let mut onehot = vec![0u8; classes];
    for &c in &valid {
        let code = prototypes
            .code(c)
            .expect("validity was checked")
            .as_f64_vec();
        onehot.iter_mut().for_each(|v| *v = 0);
        onehot[c] = 1;
        let (p, tape) = disc.score(&code, &onehot)?;
        total += bce_term(p, 1.0, 1.0 / c_norm);
        if let Some(g) = grads.as_deref_mut() {
            let up = bce_upstream(p, 1.0, 1.0 / c_norm);
            disc.net().backward_into(&tape, &[up], g)?;
        }
    }
    Ok(total)
}

/// How the generator's adversarial term reads the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLossMode {
    /// -(1/n) Σ log D(b_j | y_j): push local codes toward "global".
    Nonsaturating,
    /// The generator minimizes the discriminator's own local-code term,
    /// -(1/n) Σ log(1 - D(b_j | y_j)); the prototype term is constant with
    /// respect to the head and is omitted from the reported value.
    Shared,
}

impl Default for GeneratorLossMode {
    fn default() -> Self {
        GeneratorLossMode::Nonsaturating
    }
}

/// The generator-side adversarial loss over soft codes. D is frozen: only
/// input gradients flow, accumulated as `scale * ∂loss/∂b_j` into `grad_b`.
pub fn generator_adversarial_loss(
    disc: &Discriminator,
    batch_b: &[Vec<f64>],
    batch_labels: &[&[u8]],
    mode: GeneratorLossMode,
) -> Result<f64> {
    gen_adv_impl(disc, batch_b, batch_labels, mode, 0.0, None)
}

pub fn generator_adversarial_loss_with_grad(
    disc: &Discriminator,
    batch_b: &[Vec<f64>],
    batch_labels: &[&[u8]],
    mode: GeneratorLossMode,
    scale: f64,
    grad_b: &mut [Vec<f64>],
) -> Result<f64> {
    if grad_b.len() != batch_b.len() {
        return Err(Error::usage("gradient buffer does not match batch size"));
    }
    gen_adv_impl(disc, batch_b, batch_labels, mode, scale, Some(grad_b))
}

fn gen_adv_impl(
    disc: &Discriminator,
    batch_b: &[Vec<f64>],
    batch_labels: &[&[u8]],
    mode: GeneratorLossMode,
    scale: f64,
    mut grad_b: Option<&mut [Vec<f64>]>,
) -> Result<f64> {
    if batch_b.is_empty() {
        return Err(Error::usage("generator adversarial loss needs a nonempty batch"));
    }
    if batch_b.len() != batch_labels.len() {
        return Err(Error::usage("batch codes and labels differ in length"));
    }
    let n = batch_b.len() as f64;
    let target = match mode {
        GeneratorLossMode::Nonsaturating => 1.0,
        GeneratorLossMode::Shared => 0.0,
    };
    let k = disc.code_bits();
    let mut total = 0.0;
    for (j, (b, labels)) in batch_b.iter().zip(batch_labels).enumerate() {
        let (p, tape) = disc.score(b, labels)?;
        total += bce_term(p, target, 1.0 / n);
        if let Some(g) = grad_b.as_deref_mut() {
            let up = bce_upstream(p, target, 1.0 / n);
            if up != 0.0 {
                let input_grad = disc.net().backward_input_grad(&tape, &[up])?;
                for (dst, v) in g[j].iter_mut().zip(input_grad.iter().take(k)) {
                    *dst += scale * v;
                }
            }
        }
    }
    Ok(total)
}

/// Which optional loss terms a training variant keeps. The local triplet and
/// quantization terms are always active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveTerms {
    pub tl_global: bool,
    pub adv: bool,
}

/// Per-term values from one generator-phase batch, all pre-weighting; `total`
/// applies μ and λ.
#[derive(Debug, Clone)]
pub struct GeneratorLossTerms {
    pub tl_local: HingeLossOutput,
    pub tl_global: Option<HingeLossOutput>,
    pub quan: f64,
    pub adv: Option<f64>,
    pub total: f64,
}

/// The full generator objective over one batch:
/// tl_local + tl_global + μ·quan + λ·adv, with optional terms dropped per
/// `active`. When `grad_b` is given, the combined gradient with respect to
/// each soft code accumulates there with the same weighting.
#[allow(clippy::too_many_arguments)]
pub fn generator_total_loss(
    batch_b: &[Vec<f64>],
    batch_labels: &[&[u8]],
    plan_local: &[Triplet],
    plan_global: &[GlobalTriplet],
    prototypes: Option<&PrototypeSet>,
    disc: Option<&Discriminator>,
    w: &LossWeights,
    active: ActiveTerms,
    mode: GeneratorLossMode,
    mut grad_b: Option<&mut [Vec<f64>]>,
) -> Result<GeneratorLossTerms> {
    let tl_local = match grad_b.as_deref_mut() {
        Some(g) => triplet_loss_local_with_grad(batch_b, plan_local, w, 1.0, g)?,
        None => triplet_loss_local(batch_b, plan_local, w)?,
    };
    let tl_global = if active.tl_global {
        let protos = prototypes
            .ok_or_else(|| Error::usage("global triplet term requires prototypes"))?;
        Some(match grad_b.as_deref_mut() {
            Some(g) => triplet_loss_global_with_grad(batch_b, plan_global, protos, w, 1.0, g)?,
            None => triplet_loss_global(batch_b, plan_global, protos, w)?,
        })
    } else {
        None
    };
    let quan = match grad_b.as_deref_mut() {
        Some(g) => quantization_loss_with_grad(batch_b, w.mu, g),
        None => quantization_loss(batch_b),
    };
    let adv = if active.adv {
        let d = disc.ok_or_else(|| Error::usage("adversarial term requires a discriminator"))?;
        Some(match grad_b.as_deref_mut() {
            Some(g) => generator_adversarial_loss_with_grad(
                d,
                batch_b,
                batch_labels,
                mode,
                w.lambda,
                g,
            )?,
            None => generator_adversarial_loss(d, batch_b, batch_labels, mode)?,
        })
    } else {
        None
    };
    let total = tl_local.value
        + tl_global.map_or(0.0, |t| t.value)
        + w.mu * quan
        + w.lambda * adv.unwrap_or(0.0);
    if !total.is_finite() {
        return Err(Error::training(format!(
            "non-finite generator loss: tl_local={}, tl_global={:?}, quan={quan}, adv={adv:?}",
            tl_local.value,
            tl_global.map(|t| t.value),
        )));
    }
    Ok(GeneratorLossTerms {
        tl_local,
        tl_global,
        quan,
        adv,
        total,
    })
}
