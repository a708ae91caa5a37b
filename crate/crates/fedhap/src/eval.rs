//! Hamming-ranking retrieval evaluation: mean average precision, micro
//! averaged precision-recall curves, precision/recall at top N, and the
//! cross-silo query that merges per-silo top-k lists.
//!
//! Conventions, applied everywhere: two samples are relevant to each other
//! iff their label sets intersect; rankings sort by (Hamming distance,
//! database index) ascending so every ordering is total and deterministic;
//! queries whose evaluated ranking contains no relevant item are excluded
//! from means and counted in the report.

use crate::error::{Error, Result};
use crate::loss::labels_share_class;
use crate::model::{binarize, HashCode, HashHead};
use rayon::prelude::*;
use serde::Serialize;

/// Aligned store of hash codes and multi-hot labels for one retrieval
/// corpus. `owner` tags which silo produced it in cross-silo mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeDatabase {
    codes: Vec<HashCode>,
    labels: Vec<Vec<u8>>,
    code_bits: usize,
    classes: usize,
    owner: Option<usize>,
}

impl CodeDatabase {
    pub fn new(codes: Vec<HashCode>, labels: Vec<Vec<u8>>) -> Result<Self> {
        let first = codes
            .first()
            .ok_or_else(|| Error::usage("cannot infer dimensions of an empty code database"))?;
        let code_bits = first.len();
        let classes = labels
            .first()
            .ok_or_else(|| Error::usage("cannot infer dimensions of an empty code database"))?
            .len();
        let mut db = CodeDatabase::empty(code_bits, classes);
        if codes.len() != labels.len() {
            return Err(Error::usage("codes and labels must be aligned"));
        }
        for (code, label) in codes.into_iter().zip(labels) {
            db.push(code, label)?;
        }
        Ok(db)
    }

    pub fn empty(code_bits: usize, classes: usize) -> Self {
        CodeDatabase {
            codes: Vec::new(),
            labels: Vec::new(),
            code_bits,
            classes,
            owner: None,
        }
    }

    /// Binarizes the head's output for every sample and stores it with the
    /// sample's labels.
    pub fn encode<'a, I>(head: &HashHead, classes: usize, samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], &'a [u8])>,
    {
        let mut db = CodeDatabase::empty(head.code_bits(), classes);
        for (x, y) in samples {
            let b = head.infer(x)?;
            db.push(binarize(&b), y.to_vec())?;
        }
        Ok(db)
    }

    pub fn push(&mut self, code: HashCode, labels: Vec<u8>) -> Result<()> {
        if code.len() != self.code_bits {
            return Err(Error::usage(format!(
                "code length {} does not match database width {}",
                code.len(),
                self.code_bits
            )));
        }
        if labels.len() != self.classes || labels.iter().any(|&l| l > 1) {
            return Err(Error::usage("labels must be multi-hot with the database's class count"));
        }
        self.codes.push(code);
        self.labels.push(labels);
        Ok(())
    }

    pub fn with_owner(mut self, owner: usize) -> Self {
        self.owner = Some(owner);
        self
    }

    pub fn owner(&self) -> Option<usize> {
        self.owner
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code_bits(&self) -> usize {
        self.code_bits
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn code(&self, i: usize) -> &HashCode {
        &self.codes[i]
    }

    pub fn labels_of(&self, i: usize) -> &[u8] {
        &self.labels[i]
    }
}

/// One row of a ranking. `silo` is populated by cross-silo queries only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankedItem {
    pub silo: Option<usize>,
    pub index: usize,
    pub distance: u32,
    pub relevant: bool,
}

/// A ranking with non-decreasing distances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalResult {
    items: Vec<RankedItem>,
}

impl RetrievalResult {
    fn new(items: Vec<RankedItem>) -> Self {
        debug_assert!(items.windows(2).all(|w| w[0].distance <= w[1].distance));
        RetrievalResult { items }
    }

    pub fn items(&self) -> &[RankedItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn check_query(query: &HashCode, query_labels: Option<&[u8]>, db: &CodeDatabase) -> Result<()> {
    if query.len() != db.code_bits() {
        return Err(Error::usage(format!(
            "query has {} bits, database has {}",
            query.len(),
            db.code_bits()
        )));
    }
    if let Some(labels) = query_labels {
        if labels.len() != db.classes() {
            return Err(Error::usage("query labels do not match database class count"));
        }
    }
    Ok(())
}

/// (distance, index) pairs sorted ascending with the canonical tie-break.
fn sorted_distances(query: &HashCode, db: &CodeDatabase) -> Vec<(u32, usize)> {
    let mut pairs: Vec<(u32, usize)> = (0..db.len())
        .map(|i| {
            let d = query
                .hamming(db.code(i))
                .expect("widths checked before ranking");
            (d, i)
        })
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Ranks the whole database for one query. Relevance flags are false when
/// no query labels are given. An empty database yields an empty result.
pub fn rank_database(
    query: &HashCode,
    query_labels: Option<&[u8]>,
    db: &CodeDatabase,
) -> Result<RetrievalResult> {
    check_query(query, query_labels, db)?;
    let items = sorted_distances(query, db)
        .into_iter()
        .map(|(distance, index)| RankedItem {
            silo: None,
            index,
            distance,
            relevant: query_labels
                .map(|q| labels_share_class(q, db.labels_of(index)))
                .unwrap_or(false),
        })
        .collect();
    Ok(RetrievalResult::new(items))
}

/// Mean-average-precision report. `skipped_no_relevant` counts queries
/// whose evaluated (possibly truncated) ranking held no relevant item; they
/// do not contribute to `map`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapReport {
    pub map: f64,
    pub evaluated: usize,
    pub skipped_no_relevant: usize,
}

fn check_eval_pair(queries: &CodeDatabase, db: &CodeDatabase) -> Result<()> {
    if queries.code_bits() != db.code_bits() {
        return Err(Error::usage("query and database code widths differ"));
    }
    if queries.classes() != db.classes() {
        return Err(Error::usage("query and database class counts differ"));
    }
    Ok(())
}

/// Average precision of one query over the ranking truncated to `top_n`
/// items; None when the truncated ranking holds no relevant item.
fn average_precision(query_idx: usize, queries: &CodeDatabase, db: &CodeDatabase, top_n: usize) -> Option<f64> {
    let ranked = sorted_distances(queries.code(query_idx), db);
    let labels = queries.labels_of(query_idx);
    let mut hits = 0u64;
    let mut sum = 0.0;
    for (rank0, (_, idx)) in ranked.iter().take(top_n).enumerate() {
        if labels_share_class(labels, db.labels_of(*idx)) {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Mean average precision under Hamming ranking. `top_n = None` evaluates
/// the full ranking. Errors when no query has a relevant item to rank.
pub fn mean_average_precision(
    queries: &CodeDatabase,
    db: &CodeDatabase,
    top_n: Option<usize>,
) -> Result<MapReport> {
    check_eval_pair(queries, db)?;
    let n = top_n.unwrap_or(db.len()).min(db.len());
    let aps: Vec<Option<f64>> = (0..queries.len())
        .into_par_iter()
        .map(|q| average_precision(q, queries, db, n))
        .collect();
    let evaluated = aps.iter().flatten().count();
    if evaluated == 0 {
        return Err(Error::domain(
            "no query has a relevant item in the evaluated ranking",
        ));
    }
    // Fixed-order sum keeps the result independent of thread count.
    let sum: f64 = aps.iter().flatten().sum();
    Ok(MapReport {
        map: sum / evaluated as f64,
        evaluated,
        skipped_no_relevant: queries.len() - evaluated,
    })
}

/// One micro-averaged operating point of the precision-recall sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub radius: u32,
    pub recall: f64,
    pub precision: f64,
}

/// Sweeps the Hamming radius 0..=K and micro-averages precision and recall
/// over all queries with at least one relevant database item. Radii at
/// which nothing is retrieved are skipped.
pub fn precision_recall_curve(queries: &CodeDatabase, db: &CodeDatabase) -> Result<Vec<PrPoint>> {
    check_eval_pair(queries, db)?;
    let k = db.code_bits();
    // retrieved[r], relevant_retrieved[r]: counts at distance exactly r,
    // summed over evaluated queries; prefix sums give counts within radius.
    let per_query: Vec<Option<(Vec<u64>, Vec<u64>, u64)>> = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let labels = queries.labels_of(q);
            let mut retrieved = vec![0u64; k + 1];
            let mut rel = vec![0u64; k + 1];
            let mut total_rel = 0u64;
            for i in 0..db.len() {
                let d = queries
                    .code(q)
                    .hamming(db.code(i))
                    .expect("widths checked before ranking") as usize;
                retrieved[d] += 1;
                if labels_share_class(labels, db.labels_of(i)) {
                    rel[d] += 1;
                    total_rel += 1;
                }
            }
            (total_rel > 0).then_some((retrieved, rel, total_rel))
        })
        .collect();
    let mut retrieved = vec![0u64; k + 1];
    let mut rel = vec![0u64; k + 1];
    let mut total_rel = 0u64;
    let mut evaluated = 0usize;
    for entry in per_query.iter().flatten() {
        for r in 0..=k {
            retrieved[r] += entry.0[r];
            rel[r] += entry.1[r];
        }
        total_rel += entry.2;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::domain(
            "no query has a relevant item in the evaluated ranking",
        ));
    }
    let mut points = Vec::with_capacity(k + 1);
    let mut cum_retrieved = 0u64;
    let mut cum_rel = 0u64;
    for r in 0..=k {
        cum_retrieved += retrieved[r];
        cum_rel += rel[r];
        if cum_retrieved == 0 {
            continue;
        }
        points.push(PrPoint {
            radius: r as u32,
            recall: cum_rel as f64 / total_rel as f64,
            precision: cum_rel as f64 / cum_retrieved as f64,
        });
    }
    Ok(points)
}

/// Macro-averaged precision and recall at one list length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TopNPoint {
    pub n: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall truncated at each requested list length, macro
/// averaged over queries with at least one relevant database item.
pub fn pr_at_topn(queries: &CodeDatabase, db: &CodeDatabase, ns: &[usize]) -> Result<Vec<TopNPoint>> {
    check_eval_pair(queries, db)?;
    if ns.iter().any(|&n| n == 0) {
        return Err(Error::usage("top-n lengths must be positive"));
    }
    // (relevance flags in rank order, total relevant) per evaluated query.
    let flags: Vec<Option<(Vec<bool>, u64)>> = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let labels = queries.labels_of(q);
            let ranked = sorted_distances(queries.code(q), db);
            let flags: Vec<bool> = ranked
                .iter()
                .map(|(_, i)| labels_share_class(labels, db.labels_of(*i)))
                .collect();
            let total = flags.iter().filter(|&&f| f).count() as u64;
            (total > 0).then_some((flags, total))
        })
        .collect();
    let evaluated = flags.iter().flatten().count();
    if evaluated == 0 {
        return Err(Error::domain(
            "no query has a relevant item in the evaluated ranking",
        ));
    }
    let mut out = Vec::with_capacity(ns.len());
    for &n in ns {
        let list_len = n.min(db.len());
        let mut prec_sum = 0.0;
        let mut rec_sum = 0.0;
        for (query_flags, total_rel) in flags.iter().flatten() {
            let hits = query_flags[..list_len].iter().filter(|&&f| f).count() as f64;
            prec_sum += hits / list_len as f64;
            rec_sum += hits / *total_rel as f64;
        }
        out.push(TopNPoint {
            n,
            precision: prec_sum / evaluated as f64,
            recall: rec_sum / evaluated as f64,
        });
    }
    Ok(out)
}

/// Federated retrieval: every silo answers with its local top-k and the
/// results merge into a global top-k ordered by (distance, silo id, index).
/// The outcome is identical to ranking the union of all silos under that
/// order. Silo ids default to list position; `owner` tags override them and
/// must then be distinct.
pub fn cross_silo_query(
    query: &HashCode,
    query_labels: Option<&[u8]>,
    silos: &[CodeDatabase],
    k: usize,
) -> Result<RetrievalResult> {
    let mut ids = Vec::with_capacity(silos.len());
    for (pos, silo) in silos.iter().enumerate() {
        check_query(query, query_labels, silo)?;
        let id = silo.owner().unwrap_or(pos);
        if ids.contains(&id) {
            return Err(Error::usage(format!("duplicate silo id {id}")));
        }
        ids.push(id);
    }
    let mut merged: Vec<(u32, usize, usize, bool)> = Vec::new();
    for (silo, &id) in silos.iter().zip(&ids) {
        for (distance, index) in sorted_distances(query, silo).into_iter().take(k) {
            let relevant = query_labels
                .map(|q| labels_share_class(q, silo.labels_of(index)))
                .unwrap_or(false);
            merged.push((distance, id, index, relevant));
        }
    }
    merged.sort_unstable_by_key(|&(d, s, i, _)| (d, s, i));
    merged.truncate(k);
    let items = merged
        .into_iter()
        .map(|(distance, silo, index, relevant)| RankedItem {
            silo: Some(silo),
            index,
            distance,
            relevant,
        })
        .collect();
    Ok(RetrievalResult::new(items))
}
