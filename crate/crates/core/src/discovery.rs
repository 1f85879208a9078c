//! Quality-predicate discovery over vault entries.
//!
//! Query text is a `&`-separated list of clauses:
//!
//! ```text
//! arch:<lr|mlp>:<in>:<h1,h2,...|->:<classes>   at most once, optional
//! overall>=X   overall>X                       one or more predicates,
//! class[i]>=X  class[i]>X                      X in [0, 1]
//! owner!=NAME                                  at most once, optional
//! ```
//!
//! A matching entry satisfies every predicate against its stored
//! [`QualityReport`](crate::ml::QualityReport), has exactly the required
//! architecture (when one is given) and is not owned by the excluded owner.
//! Candidates are scored by the mean margin `value - threshold` over the
//! predicates; higher scores win and ties go to the smaller id.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ml::{ArchDescriptor, ModelKind};
use crate::vault::{ModelId, VaultEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    OverallAccuracy,
    ClassAccuracy(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = ">")]
    Above,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub metric: Metric,
    pub op: Comparison,
    pub threshold: f64,
}

impl Predicate {
    pub fn value(&self, entry: &VaultEntry) -> Option<f64> {
        match self.metric {
            Metric::OverallAccuracy => Some(entry.quality.overall_accuracy),
            Metric::ClassAccuracy(c) => entry.quality.class_accuracy(c),
        }
    }

    pub fn holds(&self, entry: &VaultEntry) -> bool {
        match (self.value(entry), self.op) {
            (Some(v), Comparison::AtLeast) => v >= self.threshold,
            (Some(v), Comparison::Above) => v > self.threshold,
            (None, _) => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub predicates: Vec<Predicate>,
    #[serde(default)]
    pub required_arch: Option<ArchDescriptor>,
    #[serde(default)]
    pub exclude_owner: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub id: ModelId,
    pub score: f64,
    pub satisfied: Vec<bool>,
}

impl Query {
    pub fn validate(&self) -> Result<()> {
        if self.predicates.is_empty() {
            return Err(Error::Query("a query needs at least one predicate".into()));
        }
        for p in &self.predicates {
            if !(0.0..=1.0).contains(&p.threshold) {
                return Err(Error::QueryRange(format!("threshold {} outside [0, 1]", p.threshold)));
            }
            if let (Metric::ClassAccuracy(c), Some(arch)) = (p.metric, &self.required_arch) {
                if c >= arch.num_classes {
                    return Err(Error::Query(format!("class {c} does not exist in a {}-class model", arch.num_classes)));
                }
            }
        }
        if let Some(arch) = &self.required_arch {
            arch.validate().map_err(|e| Error::Query(e.to_string()))?;
        }
        Ok(())
    }

    /// Every constraint holds for `entry`.
    pub fn accepts(&self, entry: &VaultEntry) -> bool {
        self.required_arch.as_ref().is_none_or(|a| a == &entry.arch)
            && self.exclude_owner.as_ref().is_none_or(|o| o != &entry.owner)
            && self.predicates.iter().all(|p| p.holds(entry))
    }

    /// Mean margin over the predicates. Only meaningful for accepted entries.
    pub fn score(&self, entry: &VaultEntry) -> f64 {
        let total: f64 = self.predicates.iter().map(|p| p.value(entry).unwrap_or(f64::NAN) - p.threshold).sum();
        total / self.predicates.len() as f64
    }

    fn result_for(&self, entry: &VaultEntry) -> MatchResult {
        MatchResult {
            id: entry.id.clone(),
            score: self.score(entry),
            satisfied: self.predicates.iter().map(|p| p.holds(entry)).collect(),
        }
    }
}

fn rank_order(a: &MatchResult, b: &MatchResult) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Orders entries that satisfy `query`: score descending, then id ascending.
pub fn rank_candidates(satisfying: &[VaultEntry], query: &Query) -> Vec<MatchResult> {
    let mut ranked: Vec<MatchResult> = satisfying.iter().map(|e| query.result_for(e)).collect();
    ranked.sort_by(rank_order);
    ranked
}

/// A discovery strategy. Any implementation must agree with [`LinearScan`]
/// on every input.
pub trait Matcher {
    fn best(&self, query: &Query, entries: &[VaultEntry]) -> Result<Option<MatchResult>>;
}

/// Exhaustive scan: filter, rank, take the first.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearScan;

impl Matcher for LinearScan {
    fn best(&self, query: &Query, entries: &[VaultEntry]) -> Result<Option<MatchResult>> {
        query.validate()?;
        let satisfying: Vec<VaultEntry> = entries.iter().filter(|e| query.accepts(e)).cloned().collect();
        Ok(rank_candidates(&satisfying, query).into_iter().next())
    }
}

/// Best entry satisfying `query`, if any.
pub fn find_match(query: &Query, entries: &[VaultEntry]) -> Result<Option<MatchResult>> {
    LinearScan.best(query, entries)
}

// ---------------------------------------------------------------------------
// Text form

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::QuerySyntax { offset, message: message.into() })
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<()> {
        if self.eat(s) { Ok(()) } else { self.err(self.pos, format!("expected {s:?}")) }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> (usize, &'a str) {
        let start = self.pos;
        let len = self.rest().find(|c: char| !f(c)).unwrap_or(self.rest().len());
        self.pos += len;
        (start, &self.text[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let (start, digits) = self.take_while(|c| c.is_ascii_digit());
        if digits.is_empty() {
            return self.err(start, "expected an unsigned integer");
        }
        digits.parse().or_else(|_| self.err(start, "integer too large"))
    }

    fn threshold(&mut self) -> Result<f64> {
        let (start, tok) = self.take_while(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-'));
        if tok.is_empty() {
            return self.err(start, "expected a threshold");
        }
        let v: f64 = tok.parse().or_else(|_| self.err(start, format!("{tok:?} is not a number")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::QueryRange(format!("threshold {tok} at byte {start} is outside [0, 1]")));
        }
        Ok(v)
    }

    fn comparison(&mut self) -> Result<Comparison> {
        if self.eat(">=") {
            Ok(Comparison::AtLeast)
        } else if self.eat(">") {
            Ok(Comparison::Above)
        } else {
            self.err(self.pos, "expected \">=\" or \">\"")
        }
    }

    fn arch(&mut self) -> Result<ArchDescriptor> {
        let (start, tag) = self.take_while(|c| c.is_ascii_alphanumeric());
        let kind = match ModelKind::from_tag(tag) {
            Some(k) => k,
            None => return self.err(start, format!("unknown model kind {tag:?}")),
        };
        self.expect(":")?;
        let input_dim = self.number()?;
        self.expect(":")?;
        let mut hidden_dims = Vec::new();
        if !self.eat("-") {
            loop {
                hidden_dims.push(self.number()?);
                if !self.eat(",") {
                    break;
                }
            }
        }
        self.expect(":")?;
        let num_classes = self.number()?;
        let arch = ArchDescriptor { kind, input_dim, hidden_dims, num_classes };
        if let Err(e) = arch.validate() {
            return self.err(start, e.to_string());
        }
        Ok(arch)
    }
}

pub fn parse_query(text: &str) -> Result<Query> {
    let mut p = Parser { text, pos: 0 };
    let mut predicates = Vec::new();
    let mut required_arch = None;
    let mut exclude_owner = None;
    loop {
        p.skip_ws();
        let start = p.pos;
        if p.eat("arch:") {
            if required_arch.is_some() {
                return p.err(start, "duplicate arch clause");
            }
            required_arch = Some(p.arch()?);
        } else if p.eat("overall") {
            let op = p.comparison()?;
            predicates.push(Predicate { metric: Metric::OverallAccuracy, op, threshold: p.threshold()? });
        } else if p.eat("class[") {
            let class = p.number()?;
            p.expect("]")?;
            let op = p.comparison()?;
            predicates.push(Predicate { metric: Metric::ClassAccuracy(class), op, threshold: p.threshold()? });
        } else if p.eat("owner!=") {
            if exclude_owner.is_some() {
                return p.err(start, "duplicate owner clause");
            }
            let (at, name) = p.take_while(|c| c != '&' && !c.is_whitespace());
            if name.is_empty() {
                return p.err(at, "expected an owner name");
            }
            exclude_owner = Some(name.to_string());
        } else {
            return p.err(start, "expected a clause: arch:, overall, class[i] or owner!=");
        }
        p.skip_ws();
        if p.pos == text.len() {
            break;
        }
        p.expect("&")?;
    }
    if predicates.is_empty() {
        return p.err(0, "a query needs at least one overall or class predicate");
    }
    let q = Query { predicates, required_arch, exclude_owner };
    q.validate()?;
    Ok(q)
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparison::AtLeast => ">=",
            Comparison::Above => ">",
        })
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut clauses = Vec::new();
        if let Some(a) = &self.required_arch {
            clauses.push(format!("arch:{a}"));
        }
        for p in &self.predicates {
            clauses.push(match p.metric {
                Metric::OverallAccuracy => format!("overall{}{}", p.op, p.threshold),
                Metric::ClassAccuracy(c) => format!("class[{c}]{}{}", p.op, p.threshold),
            });
        }
        if let Some(o) = &self.exclude_owner {
            clauses.push(format!("owner!={o}"));
        }
        f.write_str(&clauses.join(" & "))
    }
}
