//! Nested STL formulas: parsing, normalization, and flattening into
//! single-operator fragments.
//!
//! Grammar (windows in sampling steps, precedence unary > U > & > |):
//!
//! ```text
//! phi := "T" | id | "!" id | phi "&" phi | phi "|" phi
//!      | phi "U[" a "," b "]" phi | "F[" a "," b "]" phi | "G[" a "," b "]" phi
//!      | "(" phi ")"
//! ```
//!
//! `U` associates to the right. Negation is only allowed directly on
//! predicates, matching the positive normal form the tree construction needs.

use crate::error::{Error, Result};
use crate::sets::{AxisBox, Region};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Atomic predicate: either a box in state space or a halfspace
/// `g(x) = aᵀx − b ≥ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    #[serde(flatten)]
    pub shape: PredicateShape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateShape {
    Box { bounds: Vec<[f64; 2]> },
    Halfspace { normal: Vec<f64>, offset: f64 },
}

impl Predicate {
    pub fn new_box(name: &str, bounds: &[[f64; 2]]) -> Self {
        assert!(bounds.iter().all(|[l, h]| l <= h), "box interval with lo > hi");
        Predicate { name: name.to_string(), shape: PredicateShape::Box { bounds: bounds.to_vec() } }
    }

    pub fn new_halfspace(name: &str, normal: Vec<f64>, offset: f64) -> Self {
        Predicate { name: name.to_string(), shape: PredicateShape::Halfspace { normal, offset } }
    }

    /// Evaluate the predicate function g(x) ≥ 0.
    pub fn holds(&self, x: &[f64]) -> bool {
        match &self.shape {
            PredicateShape::Box { bounds } => bounds
                .iter()
                .enumerate()
                .all(|(d, [l, h])| x[d] >= *l - 1e-9 && x[d] <= *h + 1e-9),
            PredicateShape::Halfspace { normal, offset } => {
                normal.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() >= *offset - 1e-9
            }
        }
    }

    /// The predicate set as a region of the workspace. Box predicates that
    /// constrain fewer dimensions than the state (position-only predicates of
    /// a unicycle) are extruded across the free dimensions.
    pub fn region(&self, workspace: &AxisBox) -> Region {
        match &self.shape {
            PredicateShape::Box { bounds } => {
                let mut iv: Vec<[f64; 2]> = bounds.clone();
                for d in bounds.len()..workspace.dim() {
                    iv.push([workspace.lo[d], workspace.hi[d]]);
                }
                Region::from_box(AxisBox::from_intervals(&iv))
            }
            PredicateShape::Halfspace { normal, offset } => {
                // box workspaces only meet halfspaces along axis directions;
                // general normals are rasterized by the caller
                let mut iv: Vec<[f64; 2]> = (0..workspace.dim())
                    .map(|d| [workspace.lo[d], workspace.hi[d]])
                    .collect();
                let nz: Vec<usize> =
                    normal.iter().enumerate().filter(|(_, a)| a.abs() > 1e-12).map(|(d, _)| d).collect();
                assert!(nz.len() == 1, "only axis-aligned halfspaces have box regions");
                let d = nz[0];
                if normal[d] > 0.0 {
                    iv[d][0] = iv[d][0].max(offset / normal[d]);
                } else {
                    iv[d][1] = iv[d][1].min(offset / normal[d]);
                }
                Region::from_box(AxisBox::from_intervals(&iv))
            }
        }
    }
}

/// Discrete time window `[a, b]` in sampling steps, `0 ≤ a ≤ b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub a: usize,
    pub b: usize,
}

impl TimeWindow {
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if b < a {
            return Err(Error::Window { a: a as i64, b: b as i64 });
        }
        Ok(TimeWindow { a, b })
    }

    pub fn len(&self) -> usize {
        self.b - self.a
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.a, self.b)
    }
}

/// STL formula in positive normal form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Formula {
    True,
    Pred(Predicate),
    NotPred(Predicate),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Until(Box<Formula>, Box<Formula>, TimeWindow),
    Eventually(Box<Formula>, TimeWindow),
    Always(Box<Formula>, TimeWindow),
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.print(f, 0)
    }
}

impl Formula {
    // precedence levels: | = 0, & = 1, U = 2, unary = 3
    fn print(&self, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        let mine = match self {
            Formula::Or(_) => 0,
            Formula::And(_) => 1,
            Formula::Until(..) => 2,
            _ => 3,
        };
        if mine < parent {
            write!(f, "(")?;
        }
        match self {
            Formula::True => write!(f, "T")?,
            Formula::Pred(p) => write!(f, "{}", p.name)?,
            Formula::NotPred(p) => write!(f, "!{}", p.name)?,
            Formula::And(cs) => {
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " & ")?;
                    }
                    c.print(f, 2)?;
                }
            }
            Formula::Or(cs) => {
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " | ")?;
                    }
                    c.print(f, 1)?;
                }
            }
            Formula::Until(l, r, w) => {
                l.print(f, 3)?;
                write!(f, " U{w} ")?;
                r.print(f, 3)?;
            }
            Formula::Eventually(c, w) => {
                write!(f, "F{w} ")?;
                c.print(f, 3)?;
            }
            Formula::Always(c, w) => {
                write!(f, "G{w} ")?;
                c.print(f, 3)?;
            }
        }
        if mine < parent {
            write!(f, ")")?;
        }
        Ok(())
    }

    /// Parse formula text against a predicate table. Window bounds are in
    /// sampling steps.
    pub fn parse(text: &str, predicates: &BTreeMap<String, Predicate>) -> Result<Formula> {
        Self::parse_scaled(text, predicates, 1.0)
    }

    /// Parse with window bounds in seconds, dividing by the sampling period
    /// (which must divide them evenly).
    pub fn parse_scaled(
        text: &str,
        predicates: &BTreeMap<String, Predicate>,
        period: f64,
    ) -> Result<Formula> {
        let mut p = Parser { text: text.as_bytes(), pos: 0, predicates, period };
        let phi = p.parse_or()?;
        p.skip_ws();
        if p.pos != p.text.len() {
            return Err(p.err("trailing input"));
        }
        Ok(phi)
    }

    /// Replace every `φ1 U[a,b] φ2` by `G[0,b] φ1 ∧ F[a,b] φ2`, recursively.
    pub fn rewrite_until(&self) -> Formula {
        match self {
            Formula::Until(l, r, w) => {
                let g = Formula::Always(Box::new(l.rewrite_until()), TimeWindow { a: 0, b: w.b });
                let f = Formula::Eventually(Box::new(r.rewrite_until()), *w);
                Formula::And(vec![g, f])
            }
            Formula::And(cs) => Formula::And(cs.iter().map(|c| c.rewrite_until()).collect()),
            Formula::Or(cs) => Formula::Or(cs.iter().map(|c| c.rewrite_until()).collect()),
            Formula::Eventually(c, w) => Formula::Eventually(Box::new(c.rewrite_until()), *w),
            Formula::Always(c, w) => Formula::Always(Box::new(c.rewrite_until()), *w),
            other => other.clone(),
        }
    }

    /// Maximal nesting-sum of window upper bounds, in steps.
    pub fn horizon(&self) -> usize {
        match self {
            Formula::True | Formula::Pred(_) | Formula::NotPred(_) => 0,
            Formula::And(cs) | Formula::Or(cs) => cs.iter().map(|c| c.horizon()).max().unwrap_or(0),
            Formula::Until(l, r, w) => w.b + l.horizon().max(r.horizon()),
            Formula::Eventually(c, w) | Formula::Always(c, w) => w.b + c.horizon(),
        }
    }

    pub fn has_until(&self) -> bool {
        match self {
            Formula::Until(..) => true,
            Formula::And(cs) | Formula::Or(cs) => cs.iter().any(|c| c.has_until()),
            Formula::Eventually(c, _) | Formula::Always(c, _) => c.has_until(),
            _ => false,
        }
    }

    /// Direct trajectory semantics at step `t` over states sampled on the
    /// step grid. This is the reference oracle the set constructions are
    /// tested against.
    pub fn holds_at(&self, states: &[Vec<f64>], t: usize) -> bool {
        match self {
            Formula::True => true,
            Formula::Pred(p) => t < states.len() && p.holds(&states[t]),
            Formula::NotPred(p) => t < states.len() && !p.holds(&states[t]),
            Formula::And(cs) => cs.iter().all(|c| c.holds_at(states, t)),
            Formula::Or(cs) => cs.iter().any(|c| c.holds_at(states, t)),
            Formula::Until(l, r, w) => (t + w.a..=t + w.b).any(|tp| {
                r.holds_at(states, tp) && (t..=tp).all(|tq| l.holds_at(states, tq))
            }),
            Formula::Eventually(c, w) => (t + w.a..=t + w.b).any(|tp| c.holds_at(states, tp)),
            Formula::Always(c, w) => (t + w.a..=t + w.b).all(|tp| c.holds_at(states, tp)),
        }
    }

    /// Boolean-operator unchanged copy with a closure applied to windows, used
    /// to re-anchor remaining formulas.
    pub fn conjuncts(&self) -> Vec<&Formula> {
        match self {
            Formula::And(cs) => cs.iter().flat_map(|c| c.conjuncts()).collect(),
            other => vec![other],
        }
    }
}

/// One single-operator fragment of a flat conjunction: `O_i` over the
/// absolute window `[a,b]` with constraint region H¹ and target region H².
#[derive(Clone, Debug)]
pub struct FlatFragment {
    pub index: usize,
    pub op: FragmentOp,
    pub window: TimeWindow,
    /// Constraint region (the maintained region for G, full workspace for F).
    pub h1: Region,
    /// Target region (equals `h1` for G).
    pub h2: Region,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FragmentOp {
    Until,
    Always,
    Eventually,
}

impl FlatFragment {
    /// Does the suffix `states[t..]` of a trajectory satisfy this fragment,
    /// with obligations before `from` waived (they were already checked)?
    /// `satisfied_at` reports a latched hit for U/F fragments.
    pub fn suffix_satisfied(&self, states: &[Vec<f64>], from: usize) -> bool {
        let a = self.window.a.max(from);
        let b = self.window.b;
        let member = |r: &Region, t: usize| {
            t < states.len() && r.member(&states[t]).unwrap_or(false)
        };
        match self.op {
            FragmentOp::Always => (a..=b).all(|t| member(&self.h1, t)),
            FragmentOp::Eventually => (a..=b).any(|t| member(&self.h2, t)),
            FragmentOp::Until => (a..=b).any(|t| {
                member(&self.h2, t) && member(&self.h1, t) && (from..t).all(|q| member(&self.h1, q))
            }),
        }
    }

    /// Hit test for U/F latching at a single instant.
    pub fn hit(&self, x: &[f64], t: usize) -> bool {
        if t < self.window.a || t > self.window.b {
            return false;
        }
        match self.op {
            FragmentOp::Always => false,
            FragmentOp::Eventually => self.h2.member(x).unwrap_or(false),
            FragmentOp::Until => {
                self.h2.member(x).unwrap_or(false) && self.h1.member(x).unwrap_or(false)
            }
        }
    }
}

/// Flatten a conjunction of single-operator sub-formulas over predicates into
/// fragments. Nested formulas must instead go through the tree's time
/// encoding (`tree::Stlt::monitor_fragments`).
pub fn flatten(phi: &Formula, workspace: &AxisBox) -> Result<Vec<FlatFragment>> {
    let universe = Region::from_box(workspace.clone());
    let mut out = Vec::new();
    for (index, c) in phi.conjuncts().into_iter().enumerate() {
        let frag = match c {
            Formula::Always(inner, w) => {
                let region = leaf_region(inner, workspace)?;
                FlatFragment { index, op: FragmentOp::Always, window: *w, h1: region.clone(), h2: region }
            }
            Formula::Eventually(inner, w) => FlatFragment {
                index,
                op: FragmentOp::Eventually,
                window: *w,
                h1: universe.clone(),
                h2: leaf_region(inner, workspace)?,
            },
            Formula::Until(l, r, w) => FlatFragment {
                index,
                op: FragmentOp::Until,
                window: *w,
                h1: leaf_region(l, workspace)?,
                h2: leaf_region(r, workspace)?,
            },
            _ => return Err(Error::NotFlattenable),
        };
        out.push(frag);
    }
    Ok(out)
}

/// Region of a temporal-operator-free sub-formula.
fn leaf_region(phi: &Formula, workspace: &AxisBox) -> Result<Region> {
    match phi {
        Formula::True => Ok(Region::from_box(workspace.clone())),
        Formula::Pred(p) => Ok(p.region(workspace)),
        Formula::NotPred(p) => Ok(p.region(workspace).complement(workspace)),
        Formula::And(cs) => {
            let mut r = Region::from_box(workspace.clone());
            for c in cs {
                r = r.intersect(&leaf_region(c, workspace)?)?;
            }
            Ok(r)
        }
        Formula::Or(cs) => {
            let mut r = Region::empty_boxes(workspace.dim());
            for c in cs {
                r = r.union(&leaf_region(c, workspace)?)?;
            }
            Ok(r)
        }
        _ => Err(Error::NotFlattenable),
    }
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    predicates: &'a BTreeMap<String, Predicate>,
    period: f64,
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> Error {
        Error::Syntax { position: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.text.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", c as char)))
        }
    }

    fn parse_or(&mut self) -> Result<Formula> {
        let mut parts = vec![self.parse_and()?];
        while self.peek() == Some(b'|') {
            self.pos += 1;
            parts.push(self.parse_and()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::Or(parts) })
    }

    fn parse_and(&mut self) -> Result<Formula> {
        let mut parts = vec![self.parse_until()?];
        while self.peek() == Some(b'&') {
            self.pos += 1;
            parts.push(self.parse_until()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::And(parts) })
    }

    fn parse_until(&mut self) -> Result<Formula> {
        let left = self.parse_unary()?;
        self.skip_ws();
        if self.text.get(self.pos) == Some(&b'U') && self.text.get(self.pos + 1) == Some(&b'[') {
            self.pos += 1;
            let w = self.parse_window()?;
            let right = self.parse_until()?; // right-associative
            return Ok(Formula::Until(Box::new(left), Box::new(right), w));
        }
        Ok(left)
    }

    fn parse_unary(&mut self) -> Result<Formula> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.parse_or()?;
                self.eat(b')')?;
                Ok(inner)
            }
            Some(b'!') => {
                self.pos += 1;
                let name = self.parse_ident()?;
                Ok(Formula::NotPred(self.lookup(&name)?))
            }
            Some(b'F') if self.text.get(self.pos + 1) == Some(&b'[') => {
                self.pos += 1;
                let w = self.parse_window()?;
                Ok(Formula::Eventually(Box::new(self.parse_unary()?), w))
            }
            Some(b'G') if self.text.get(self.pos + 1) == Some(&b'[') => {
                self.pos += 1;
                let w = self.parse_window()?;
                Ok(Formula::Always(Box::new(self.parse_unary()?), w))
            }
            Some(c) if c == b'T' && !self.ident_continues(self.pos + 1) => {
                self.pos += 1;
                Ok(Formula::True)
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let name = self.parse_ident()?;
                Ok(Formula::Pred(self.lookup(&name)?))
            }
            _ => Err(self.err("expected formula")),
        }
    }

    fn ident_continues(&self, at: usize) -> bool {
        self.text
            .get(at)
            .map(|c| c.is_ascii_alphanumeric() || *c == b'_')
            .unwrap_or(false)
    }

    fn parse_ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        while self.ident_continues(self.pos) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected identifier"));
        }
        Ok(String::from_utf8_lossy(&self.text[start..self.pos]).into_owned())
    }

    fn lookup(&self, name: &str) -> Result<Predicate> {
        self.predicates
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownPredicate(name.to_string()))
    }

    fn parse_window(&mut self) -> Result<TimeWindow> {
        self.eat(b'[')?;
        let a = self.parse_number()?;
        self.eat(b',')?;
        let b = self.parse_number()?;
        self.eat(b']')?;
        let (a, b) = (self.to_steps(a)?, self.to_steps(b)?);
        if b < a {
            return Err(Error::Window { a: a as i64, b: b as i64 });
        }
        Ok(TimeWindow { a, b })
    }

    fn to_steps(&self, seconds: f64) -> Result<usize> {
        let steps = seconds / self.period;
        if (steps - steps.round()).abs() > 1e-9 || steps < 0.0 {
            return Err(Error::PeriodMismatch(seconds, self.period));
        }
        Ok(steps.round() as usize)
    }

    fn parse_number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while self
            .text
            .get(self.pos)
            .map(|c| c.is_ascii_digit() || *c == b'.' || *c == b'-')
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        std::str::from_utf8(&self.text[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err("expected number"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn mu_table() -> BTreeMap<String, Predicate> {
        let mut t = BTreeMap::new();
        t.insert("mu1".into(), Predicate::new_box("mu1", &[[-4.5, -1.5], [-4.5, -1.5]]));
        t.insert("mu2".into(), Predicate::new_box("mu2", &[[1.5, 4.5], [-4.5, -1.5]]));
        t.insert("mu3".into(), Predicate::new_box("mu3", &[[1.75, 4.25], [-1.25, 1.25]]));
        t
    }

    #[test]
    fn parses_case_study_formula() {
        let phi =
            Formula::parse("G[0,16] F[2,10] mu1 | F[10,14] (mu2 U[5,10] mu3)", &mu_table()).unwrap();
        match &phi {
            Formula::Or(cs) => {
                assert!(matches!(&cs[0], Formula::Always(inner, w)
                    if w.a == 0 && w.b == 16 && matches!(**inner, Formula::Eventually(_, wi) if wi.a == 2 && wi.b == 10)));
                assert!(matches!(&cs[1], Formula::Eventually(inner, w)
                    if w.a == 10 && w.b == 14 && matches!(**inner, Formula::Until(_, _, wu) if wu.a == 5 && wu.b == 10)));
            }
            other => panic!("bad parse: {other:?}"),
        }
    }

    #[test]
    fn parses_trivia() {
        assert_eq!(Formula::parse("T", &mu_table()).unwrap(), Formula::True);
        let phi = Formula::parse("!mu1 & mu2", &mu_table()).unwrap();
        assert!(matches!(&phi, Formula::And(cs)
            if matches!(cs[0], Formula::NotPred(_)) && matches!(cs[1], Formula::Pred(_))));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            Formula::parse("mu9", &mu_table()),
            Err(Error::UnknownPredicate(n)) if n == "mu9"
        ));
        assert!(matches!(Formula::parse("G[5,2] mu1", &mu_table()), Err(Error::Window { .. })));
        assert!(matches!(Formula::parse("mu1 &", &mu_table()), Err(Error::Syntax { .. })));
    }

    #[test]
    fn print_parse_roundtrip() {
        let table = mu_table();
        for text in [
            "G[0,16] F[2,10] mu1 | F[10,14] (mu2 U[5,10] mu3)",
            "T",
            "!mu1 & mu2",
            "(mu1 U[0,3] mu2) U[1,2] mu3",
            "mu1 & mu2 & mu3 | mu1",
        ] {
            let phi = Formula::parse(text, &table).unwrap();
            let printed = phi.to_string();
            let reparsed = Formula::parse(&printed, &table).unwrap();
            assert_eq!(phi, reparsed, "roundtrip failed on `{text}` -> `{printed}`");
        }
    }

    #[test]
    fn rewrite_until_examples() {
        let table = mu_table();
        let phi = Formula::parse("mu2 U[5,10] mu3", &table).unwrap();
        let want = Formula::parse("G[0,10] mu2 & F[5,10] mu3", &table).unwrap();
        assert_eq!(phi.rewrite_until(), want);

        let phi = Formula::parse("F[2,10] mu1", &table).unwrap();
        assert_eq!(phi.rewrite_until(), phi);

        let phi = Formula::parse("(mu1 U[0,3] mu2) U[1,2] mu3", &table).unwrap();
        let want =
            Formula::parse("G[0,2] (G[0,3] mu1 & F[0,3] mu2) & F[1,2] mu3", &table).unwrap();
        assert_eq!(phi.rewrite_until(), want);
        assert!(!phi.rewrite_until().has_until());
    }

    #[test]
    fn horizon_examples() {
        let table = mu_table();
        assert_eq!(Formula::parse("G[0,16] F[2,10] mu1", &table).unwrap().horizon(), 26);
        assert_eq!(Formula::parse("mu1", &table).unwrap().horizon(), 0);
        assert_eq!(
            Formula::parse("F[10,14] (mu2 U[5,10] mu3)", &table).unwrap().horizon(),
            24
        );
    }

    #[test]
    fn horizon_invariant_under_rewrite() {
        let table = mu_table();
        for text in [
            "G[0,16] F[2,10] mu1 | F[10,14] (mu2 U[5,10] mu3)",
            "(mu1 U[0,3] mu2) U[1,2] mu3",
            "mu1 U[4,7] mu2",
        ] {
            let phi = Formula::parse(text, &table).unwrap();
            assert_eq!(phi.horizon(), phi.rewrite_until().horizon(), "{text}");
        }
    }

    #[test]
    fn flatten_flat_conjunction() {
        let table = mu_table();
        let ws = AxisBox::from_intervals(&[[-18.5, 18.5], [-18.5, 18.5]]);
        let phi = Formula::parse("G[0,10] mu2 & F[5,10] mu3", &table).unwrap();
        let frags = flatten(&phi, &ws).unwrap();
        assert_eq!(frags.len(), 2);
        assert_eq!(frags[0].op, FragmentOp::Always);
        assert!(frags[0].h1.set_eq(&table["mu2"].region(&ws)).unwrap());
        assert!(frags[0].h2.set_eq(&frags[0].h1).unwrap());
        assert_eq!(frags[1].op, FragmentOp::Eventually);
        assert!(frags[1].h1.set_eq(&Region::from_box(ws.clone())).unwrap());

        let phi = Formula::parse("mu2 U[5,10] mu3", &table).unwrap();
        let frags = flatten(&phi, &ws).unwrap();
        assert_eq!(frags.len(), 1);
        assert_eq!(frags[0].op, FragmentOp::Until);
        assert!(frags[0].h1.set_eq(&table["mu2"].region(&ws)).unwrap());
        assert!(frags[0].h2.set_eq(&table["mu3"].region(&ws)).unwrap());

        // two temporal operators in one conjunct without a time encoding
        let phi = Formula::parse("G[0,16] F[2,10] mu1", &table).unwrap();
        assert!(matches!(flatten(&phi, &ws), Err(Error::NotFlattenable)));
    }

    #[test]
    fn rewrite_preserves_sampled_semantics_exhaustively() {
        // gridworld: states -2..2, all input sequences of length <= 6
        let table: BTreeMap<String, Predicate> = [
            ("p".to_string(), Predicate::new_box("p", &[[1.0, 2.0]])),
            ("q".to_string(), Predicate::new_box("q", &[[-2.0, 0.0]])),
        ]
        .into();
        let formulas = [
            Formula::parse("p U[1,3] q", &table).unwrap(),
            Formula::parse("(p U[0,2] q) U[1,2] p", &table).unwrap(),
            Formula::parse("G[0,2] (p U[0,3] q)", &table).unwrap(),
        ];
        let dynamics = crate::dynamics::Dynamics::walk1d(-2.0, 2.0);
        let mut trajectories = Vec::new();
        let n = 6usize;
        for start in -2..=2 {
            for seq in 0..3usize.pow(n as u32) {
                let mut s = seq;
                let mut x = vec![vec![start as f64]];
                for _ in 0..n {
                    let u = (s % 3) as f64 - 1.0;
                    s /= 3;
                    let nx = dynamics.step(x.last().unwrap(), &[u]);
                    x.push(nx);
                }
                trajectories.push(x);
            }
        }
        for phi in &formulas {
            let rw = phi.rewrite_until();
            for traj in &trajectories {
                assert_eq!(
                    phi.holds_at(traj, 0),
                    rw.holds_at(traj, 0),
                    "mismatch on {phi} vs {rw} at {traj:?}"
                );
            }
        }
    }
}
