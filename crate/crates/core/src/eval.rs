//! Keyword-recovery evaluation: redundancy filtering by protein-level
//! identity, the D and R ratios, the TP rate and the threshold sweep.
//!
//! A result pair is (query protein, patch); its keywords are compared
//! through the patch's source protein. D counts each distinct
//! (query, patch) pair once. R is taken over the cross product of query
//! proteins and distinct patch source proteins. Entities without keywords
//! are left out of both numerator and denominator.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::grid::GridParams;
use crate::ingest::{KeywordAnnotation, Protein};
use crate::matcher::{structural_identity, MatchOptions, MatchResult, ResultRow};

pub const REPORT_HEADER: &str = "tau_pp\ttau_prot\tD\tR\tTP\tpair_count";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub tau_pp_values: Vec<f64>,
    pub tau_prot_values: Vec<f64>,
    pub ideal: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tau_pp_values: vec![0.80, 0.85, 0.90, 0.95],
            tau_prot_values: (1..=10).map(|i| i as f64 / 10.0).collect(),
            ideal: 1.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_pp_values.is_empty() || self.tau_prot_values.is_empty() {
            return Err(Error::InvalidParams("threshold lists must be non-empty".into()));
        }
        let all = self.tau_pp_values.iter().chain(&self.tau_prot_values).chain([&self.ideal]);
        for &v in all {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParams(format!("threshold {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A (query protein, patch) result as seen by the evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub query_id: String,
    pub patch_id: String,
    pub source_protein_id: String,
    pub score: f64,
}

impl EvalPair {
    pub fn from_match(query_id: &str, r: &MatchResult) -> Self {
        EvalPair {
            query_id: query_id.to_string(),
            patch_id: r.patch_id.clone(),
            source_protein_id: r.source_protein_id.clone(),
            score: r.score,
        }
    }

    pub fn from_row(query_id: &str, r: &ResultRow) -> Self {
        EvalPair {
            query_id: query_id.to_string(),
            patch_id: r.patch_id.clone(),
            source_protein_id: r.source_protein_id.clone(),
            score: r.score,
        }
    }
}

/// Keyword sets by entity id.
#[derive(Debug, Clone, Default)]
pub struct Annotations {
    map: HashMap<String, BTreeSet<String>>,
}

impl Annotations {
    pub fn new(annotations: impl IntoIterator<Item = KeywordAnnotation>) -> Self {
        let mut map: HashMap<String, BTreeSet<String>> = HashMap::new();
        for a in annotations {
            map.entry(a.entity_id).or_default().extend(a.keywords);
        }
        Annotations { map }
    }

    pub fn keywords(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.map.get(id).filter(|k| !k.is_empty())
    }

    pub fn is_annotated(&self, id: &str) -> bool {
        self.keywords(id).is_some()
    }

    /// `None` when either side is missing or has no keywords.
    pub fn same(&self, a: &str, b: &str) -> Option<bool> {
        Some(intersects(self.keywords(a)?, self.keywords(b)?))
    }
}

fn intersects(a: &BTreeSet<String>, b: &BTreeSet<String>) -> bool {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().any(|k| large.contains(k))
}

/// Whether two annotations share a keyword; `None` if either is empty.
pub fn same_keywords(a: &KeywordAnnotation, b: &KeywordAnnotation) -> Option<bool> {
    if a.keywords.is_empty() || b.keywords.is_empty() {
        return None;
    }
    Some(intersects(&a.keywords, &b.keywords))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Ratio {
    pub same: usize,
    pub annotated: usize,
    /// Pairs skipped because a side had no keywords.
    pub unannotated: usize,
}

impl Ratio {
    pub fn value(&self) -> Option<f64> {
        (self.annotated > 0).then(|| self.same as f64 / self.annotated as f64)
    }

    fn count(&mut self, same: Option<bool>) {
        match same {
            Some(s) => {
                self.annotated += 1;
                self.same += s as usize;
            }
            None => self.unannotated += 1,
        }
    }
}

/// Distinct (query, patch) pairs, first occurrence wins.
fn distinct_pairs(pairs: &[EvalPair]) -> Vec<&EvalPair> {
    let mut seen = HashSet::new();
    pairs
        .iter()
        .filter(|p| seen.insert((p.query_id.as_str(), p.patch_id.as_str())))
        .collect()
}

/// Share of distinct result pairs whose query and source share a keyword.
#[allow(non_snake_case)]
pub fn compute_D(pairs: &[EvalPair], annotations: &Annotations) -> Ratio {
    let mut r = Ratio::default();
    for p in distinct_pairs(pairs) {
        r.count(annotations.same(&p.query_id, &p.source_protein_id));
    }
    r
}

/// Share of keyword-sharing pairs over queries × distinct sources.
#[allow(non_snake_case)]
pub fn compute_R<Q, S>(query_ids: &[Q], source_ids: &[S], annotations: &Annotations) -> Ratio
where
    Q: AsRef<str>,
    S: AsRef<str>,
{
    let queries: BTreeSet<&str> = query_ids.iter().map(AsRef::as_ref).collect();
    let sources: BTreeSet<&str> = source_ids.iter().map(AsRef::as_ref).collect();
    let mut r = Ratio::default();
    for q in &queries {
        for s in &sources {
            r.count(annotations.same(q, s));
        }
    }
    r
}

pub fn tp_rate(d: f64, r: f64, ideal: f64) -> Result<f64> {
    if r == ideal {
        return Err(Error::UndefinedTp);
    }
    Ok((d - r) / (ideal - r))
}

/// Protein-level identity between a query and a patch source protein.
pub trait IdentitySource: Sync {
    /// Fails with [`Error::MissingSourceProtein`] when either structure is
    /// unavailable.
    fn identity(&self, query_id: &str, source_id: &str) -> Result<f64>;
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Identities from a fixed table, keyed by unordered protein pair.
#[derive(Debug, Clone, Default)]
pub struct FixedIdentities {
    table: HashMap<(String, String), f64>,
}

impl FixedIdentities {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, a: &str, b: &str, identity: f64) {
        self.table.insert(unordered(a, b), identity);
    }
}

impl IdentitySource for FixedIdentities {
    fn identity(&self, query_id: &str, source_id: &str) -> Result<f64> {
        if query_id == source_id {
            return Ok(1.0);
        }
        self.table
            .get(&unordered(query_id, source_id))
            .copied()
            .ok_or_else(|| Error::MissingSourceProtein(source_id.to_string()))
    }
}

/// Identities computed with [`structural_identity`] and cached per
/// unordered pair. The score is asymmetric, so the larger direction is used.
pub struct StructuralIdentities {
    proteins: HashMap<String, Protein>,
    params: GridParams,
    opts: MatchOptions,
    cache: Mutex<HashMap<(String, String), f64>>,
}

impl StructuralIdentities {
    pub fn new(proteins: impl IntoIterator<Item = Protein>, params: GridParams, opts: MatchOptions) -> Self {
        StructuralIdentities {
            proteins: proteins.into_iter().map(|p| (p.protein_id.clone(), p)).collect(),
            params,
            opts,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached_pairs(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    fn protein(&self, id: &str) -> Result<&Protein> {
        self.proteins
            .get(id)
            .ok_or_else(|| Error::MissingSourceProtein(id.to_string()))
    }
}

impl IdentitySource for StructuralIdentities {
    fn identity(&self, query_id: &str, source_id: &str) -> Result<f64> {
        let key = unordered(query_id, source_id);
        if let Some(&v) = self.cache.lock().unwrap().get(&key) {
            return Ok(v);
        }
        let a = self.protein(query_id)?;
        let b = self.protein(source_id)?;
        let v = if query_id == source_id {
            1.0
        } else {
            structural_identity(a, b, &self.params, &self.opts)?
                .max(structural_identity(b, a, &self.params, &self.opts)?)
        };
        self.cache.lock().unwrap().insert(key, v);
        Ok(v)
    }
}

#[derive(Debug, Default)]
pub struct FilterOutcome {
    pub kept: Vec<EvalPair>,
    pub removed: Vec<EvalPair>,
    /// Pairs whose identity could not be computed.
    pub dropped: Vec<(EvalPair, Error)>,
}

/// Removes pairs whose query and source identity exceeds `tau_prot`.
pub fn redundancy_filter(pairs: &[EvalPair], tau_prot: f64, identities: &dyn IdentitySource) -> Result<FilterOutcome> {
    let mut out = FilterOutcome::default();
    for p in pairs {
        match identities.identity(&p.query_id, &p.source_protein_id) {
            Ok(v) if v > tau_prot => out.removed.push(p.clone()),
            Ok(_) => out.kept.push(p.clone()),
            Err(e @ Error::MissingSourceProtein(_)) => out.dropped.push((p.clone(), e)),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpRow {
    pub tau_pp: f64,
    pub tau_prot: f64,
    pub d: Option<f64>,
    pub r: Option<f64>,
    pub tp: Option<f64>,
    /// Distinct (query, patch) pairs left after both filters.
    pub pair_count: usize,
    pub removed: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TpReport {
    pub rows: Vec<TpRow>,
    /// Identity lookups that failed with a missing structure.
    pub missing_sources: Vec<String>,
}

impl TpReport {
    pub fn write_tsv(&self, w: &mut dyn Write) -> std::io::Result<()> {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "NA".to_string(), |x| x.to_string())
        }
        writeln!(w, "{REPORT_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.tau_pp,
                r.tau_prot,
                opt(r.d),
                opt(r.r),
                opt(r.tp),
                r.pair_count
            )?;
        }
        Ok(())
    }
}

/// One row per (tau_pp, tau_prot). `pairs` must hold every result at or
/// above the smallest tau_pp; each row keeps those with score ≥ tau_pp,
/// drops redundant ones and computes D against the shared R. Identities
/// are computed once per distinct pair before the cells fan out.
pub fn sweep<S: AsRef<str>>(
    pairs: &[EvalPair],
    query_ids: &[S],
    source_ids: &[S],
    config: &EvalConfig,
    annotations: &Annotations,
    identities: &dyn IdentitySource,
    exec: Execution,
) -> Result<TpReport> {
    config.validate()?;
    let r = compute_R(query_ids, source_ids, annotations).value();

    let mut keys: Vec<(String, String)> = pairs
        .iter()
        .map(|p| (p.query_id.clone(), p.source_protein_id.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    keys.dedup();
    let looked_up = exec::map(exec, &keys, |(q, s)| identities.identity(q, s));
    let mut identity: HashMap<(&str, &str), Option<f64>> = HashMap::new();
    let mut missing = BTreeSet::new();
    for ((q, s), v) in keys.iter().zip(looked_up) {
        let v = match v {
            Ok(v) => Some(v),
            Err(Error::MissingSourceProtein(id)) => {
                missing.insert(id);
                None
            }
            Err(e) => return Err(e),
        };
        identity.insert((q.as_str(), s.as_str()), v);
    }

    let cells: Vec<(f64, f64)> = config
        .tau_pp_values
        .iter()
        .flat_map(|&pp| config.tau_prot_values.iter().map(move |&pr| (pp, pr)))
        .collect();
    let rows = exec::map(exec, &cells, |&(tau_pp, tau_prot)| {
        let (mut removed, mut dropped) = (0, 0);
        let mut kept = Vec::new();
        for p in pairs.iter().filter(|p| p.score >= tau_pp) {
            match identity[&(p.query_id.as_str(), p.source_protein_id.as_str())] {
                None => dropped += 1,
                Some(v) if v > tau_prot => removed += 1,
                Some(_) => kept.push(p.clone()),
            }
        }
        let d = compute_D(&kept, annotations).value();
        let tp = match (d, r) {
            (Some(d), Some(r)) => tp_rate(d, r, config.ideal).ok(),
            _ => None,
        };
        TpRow {
            tau_pp,
            tau_prot,
            d,
            r,
            tp,
            pair_count: distinct_pairs(&kept).len(),
            removed,
            dropped,
        }
    });
    Ok(TpReport {
        rows,
        missing_sources: missing.into_iter().collect(),
    })
}
