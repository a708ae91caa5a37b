//! Client-side class means and server-side prototype aggregation.
//!
//! Clients send the real-valued per-class mean of their soft codes; the
//! server averages the reporting clients' means coordinate-wise and takes the
//! sign. Classes no client reports are carried as invalid and must never be
//! consumed by a loss.

use crate::error::{Error, Result};
use crate::model::{binarize, HashCode, HashHead};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Per-class mean of a client's soft codes plus the per-class sample count.
/// A multi-label sample contributes to every class it carries, so counts can
/// sum to more than the client's sample count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMeanReport {
    means: Vec<Option<Vec<f64>>>,
    counts: Vec<u64>,
    code_bits: usize,
}

impl ClassMeanReport {
    pub fn new(means: Vec<Option<Vec<f64>>>, counts: Vec<u64>, code_bits: usize) -> Result<Self> {
        if means.len() != counts.len() {
            return Err(Error::usage("class mean report shape mismatch"));
        }
        for (c, (m, n)) in means.iter().zip(&counts).enumerate() {
            match m {
                Some(_) if *n == 0 => {
                    return Err(Error::usage(format!("class {c} has a mean but zero count")))
                }
                Some(v) if v.len() != code_bits => {
                    return Err(Error::usage(format!("class {c} mean has wrong length")))
                }
                None if *n > 0 => {
                    return Err(Error::usage(format!("class {c} has count {n} but no mean")))
                }
                _ => {}
            }
        }
        Ok(ClassMeanReport {
            means,
            counts,
            code_bits,
        })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn code_bits(&self) -> usize {
        self.code_bits
    }

    pub fn mean(&self, class: usize) -> Option<&[f64]> {
        self.means.get(class).and_then(|m| m.as_deref())
    }

    pub fn count(&self, class: usize) -> u64 {
        self.counts.get(class).copied().unwrap_or(0)
    }
}

/// Runs the head over a client's samples and averages the soft codes per
/// carried class.
pub fn local_class_means<'a, I>(head: &HashHead, samples: I, classes: usize) -> Result<ClassMeanReport>
where
    I: IntoIterator<Item = (&'a [f64], &'a [u8])>,
{
    let k = head.code_bits();
    let mut sums = vec![vec![0.0f64; k]; classes];
    let mut counts = vec![0u64; classes];
    for (x, y) in samples {
        if y.len() != classes {
            return Err(Error::usage(format!(
                "label vector length {} does not match class count {classes}",
                y.len()
            )));
        }
        let b = head.infer(x)?;
        for (c, &flag) in y.iter().enumerate() {
            if flag != 0 {
                counts[c] += 1;
                for (s, v) in sums[c].iter_mut().zip(&b) {
                    *s += v;
                }
            }
        }
    }
    let means = sums
        .into_iter()
        .zip(&counts)
        .map(|(mut s, &n)| {
            if n == 0 {
                None
            } else {
                s.iter_mut().for_each(|v| *v /= n as f64);
                Some(s)
            }
        })
        .collect();
    ClassMeanReport::new(means, counts, k)
}

/// One prototype hash code per class plus validity. Carries a shared read
/// counter so a run can prove it never consumed prototypes (the FedAvg-style
/// baseline must not touch them).
#[derive(Debug, Serialize, Deserialize)]
pub struct PrototypeSet {
    codes: Vec<Option<HashCode>>,
    code_bits: usize,
    round: u64,
    #[serde(skip)]
    reads: Arc<AtomicU64>,
}

impl Clone for PrototypeSet {
    fn clone(&self) -> Self {
        PrototypeSet {
            codes: self.codes.clone(),
            code_bits: self.code_bits,
            round: self.round,
            reads: Arc::clone(&self.reads),
        }
    }
}

impl PrototypeSet {
    /// Seeded uniform random ±1 prototypes for every class (round-0 bootstrap).
    pub fn random(classes: usize, code_bits: usize, rng: &mut impl Rng) -> Result<Self> {
        if classes == 0 || code_bits == 0 {
            return Err(Error::config("prototype set dimensions must be positive"));
        }
        let codes = (0..classes)
            .map(|_| {
                let bits = (0..code_bits)
                    .map(|_| if rng.gen_bool(0.5) { 1i8 } else { -1i8 })
                    .collect();
                HashCode::from_bits(bits).map(Some)
            })
            .collect::<Result<_>>()?;
        Ok(PrototypeSet {
            codes,
            code_bits,
            round: 0,
            reads: Arc::new(AtomicU64::new(0)),
        })
    }

    /// All classes invalid (round-0 alternative: prototype-dependent losses
    /// are skipped until the first aggregation).
    pub fn disabled(classes: usize, code_bits: usize) -> Result<Self> {
        if classes == 0 || code_bits == 0 {
            return Err(Error::config("prototype set dimensions must be positive"));
        }
        Ok(PrototypeSet {
            codes: vec![None; classes],
            code_bits,
            round: 0,
            reads: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn classes(&self) -> usize {
        self.codes.len()
    }

    pub fn code_bits(&self) -> usize {
        self.code_bits
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// The prototype of `class`, None when no client has reported it.
    /// Counts as a read.
    pub fn code(&self, class: usize) -> Option<&HashCode> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.codes.get(class).and_then(|c| c.as_ref())
    }

    /// Counts as a read.
    pub fn is_valid(&self, class: usize) -> bool {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.codes.get(class).is_some_and(|c| c.is_some())
    }

    /// Counts as a read.
    pub fn any_valid(&self) -> bool {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.codes.iter().any(|c| c.is_some())
    }

    /// Counts as a read.
    pub fn valid_count(&self) -> usize {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.codes.iter().filter(|c| c.is_some()).count()
    }

    /// Total number of reads observed through this set's shared counter.
    pub fn read_count(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    /// Shares `other`'s read counter so the count survives re-aggregation
    /// across rounds.
    pub fn adopt_counter(&mut self, other: &PrototypeSet) {
        self.reads = Arc::clone(&other.reads);
    }
}

/// Unweighted aggregation: per class, the mean over reporting clients of
/// their class means, then the sign (sign(0) = +1).
pub fn aggregate_prototypes(reports: &[ClassMeanReport], round: u64) -> Result<PrototypeSet> {
    aggregate_impl(reports, false, round)
}

/// Count-weighted variant: client means weighted by their per-class counts.
pub fn aggregate_prototypes_weighted(
    reports: &[ClassMeanReport],
    round: u64,
) -> Result<PrototypeSet> {
    aggregate_impl(reports, true, round)
}

fn aggregate_impl(reports: &[ClassMeanReport], weighted: bool, round: u64) -> Result<PrototypeSet> {
    let first = reports
        .first()
        .ok_or_else(|| Error::protocol("prototype aggregation needs at least one report"))?;
    let classes = first.classes();
    let code_bits = first.code_bits();
    if reports
        .iter()
        .any(|r| r.classes() != classes || r.code_bits() != code_bits)
    {
        return Err(Error::protocol("class mean reports disagree on shape"));
    }
    let mut codes = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut sum = vec![0.0f64; code_bits];
        let mut total_weight = 0.0f64;
        for r in reports {
            if let Some(mean) = r.mean(c) {
                let w = if weighted { r.count(c) as f64 } else { 1.0 };
                for (s, v) in sum.iter_mut().zip(mean) {
                    *s += w * v;
                }
                total_weight += w;
            }
        }
        if total_weight > 0.0 {
            sum.iter_mut().for_each(|v| *v /= total_weight);
            codes.push(Some(binarize(&sum)));
        } else {
            codes.push(None);
        }
    }
    Ok(PrototypeSet {
        codes,
        code_bits,
        round,
        reads: Arc::new(AtomicU64::new(0)),
    })
}
